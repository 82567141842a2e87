#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "hquic/rng.hpp"
#include "hquic/tone_loss.hpp"
#include "testutil.hpp"

using namespace hquic;

namespace {

// brute-force oracle: sort, slice, mean
double trimmed_mean_oracle(std::vector<double> v, double al, double ar) {
  std::sort(v.begin(), v.end());
  std::size_t k = v.size();
  std::size_t dl = static_cast<std::size_t>(std::floor(al * static_cast<double>(k)));
  std::size_t dr = static_cast<std::size_t>(std::floor(ar * static_cast<double>(k)));
  double sum = 0.0;
  for (std::size_t i = dl; i < k - dr; ++i) sum += v[i];
  return sum / static_cast<double>(k - dl - dr);
}

Tensor const_image(double r, double g, double b, int h = 4, int w = 4) {
  Tensor x({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx) {
      x.at3(0, y, xx) = r;
      x.at3(1, y, xx) = g;
      x.at3(2, y, xx) = b;
    }
  return x;
}

}  // namespace

TEST_CASE("opponent channels hand values") {
  SUBCASE("gray") {
    auto [rg, yb] = opponent_channels(const_image(0.3, 0.3, 0.3));
    for (std::size_t i = 0; i < rg.numel(); ++i) {
      CHECK(rg[i] == 0.0);
      CHECK(yb[i] == 0.0);
    }
  }
  SUBCASE("pure red") {
    auto [rg, yb] = opponent_channels(const_image(1.0, 0.0, 0.0));
    for (std::size_t i = 0; i < rg.numel(); ++i) {
      CHECK(rg[i] == 1.0);
      CHECK(yb[i] == 0.5);
    }
  }
  SUBCASE("(0.2,0.4,0.6)") {
    auto [rg, yb] = opponent_channels(const_image(0.2, 0.4, 0.6));
    for (std::size_t i = 0; i < rg.numel(); ++i) {
      CHECK(rg[i] == doctest::Approx(-0.2).epsilon(1e-12));
      CHECK(yb[i] == doctest::Approx(-0.3).epsilon(1e-12));
    }
  }
}

TEST_CASE("trimmed_mean matches brute-force oracle for all K<=100") {
  Rng rng(31);
  for (int k = 1; k <= 100; ++k) {
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<double> v(static_cast<std::size_t>(k));
      for (auto& e : v) e = rng.uniform() * 2.0 - 1.0;
      double al = 0.5 * rng.uniform();
      double ar = 0.5 * rng.uniform();
      if (std::floor(al * k) + std::floor(ar * k) >= k) continue;
      Tensor t({k}, v);
      TrimConfig cfg{al, ar};
      CHECK(trimmed_mean(t, cfg) == trimmed_mean_oracle(v, al, ar));
    }
  }
}

TEST_CASE("trimmed_mean hand values") {
  Tensor t({10}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(trimmed_mean(t, {0.1, 0.1}) == doctest::Approx(4.5).epsilon(1e-12));
  CHECK(trimmed_mean(t, {0.0, 0.0}) == doctest::Approx(4.5).epsilon(1e-12));
  Tensor c({7}, {2.5, 2.5, 2.5, 2.5, 2.5, 2.5, 2.5});
  CHECK(trimmed_mean(c, {0.2, 0.3}) == 2.5);
}

TEST_CASE("tone loss hand values") {
  TrimConfig cfg{0.1, 0.1};
  CHECK(tone_adjustment_loss(const_image(0.4, 0.4, 0.4), cfg) == 0.0);
  CHECK(tone_adjustment_loss(const_image(1.0, 0.0, 0.0), cfg) ==
        doctest::Approx(std::sqrt(1.25)).epsilon(1e-9));
  CHECK(tone_adjustment_loss(const_image(0.2, 0.4, 0.6), cfg) ==
        doctest::Approx(std::sqrt(0.13)).epsilon(1e-9));
}

TEST_CASE("tone loss is permutation invariant") {
  Rng rng(8);
  Tensor x = testutil::random_image(6, 7, 909);
  TrimConfig cfg{0.15, 0.1};
  double base = tone_adjustment_loss(x, cfg);
  std::vector<int> perm(42);
  std::iota(perm.begin(), perm.end(), 0);
  for (int rep = 0; rep < 5; ++rep) {
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
    Tensor shuf({3, 6, 7});
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 42; ++i)
        shuf[static_cast<std::size_t>(c * 42 + i)] =
            x[static_cast<std::size_t>(c * 42 + perm[static_cast<std::size_t>(i)])];
    CHECK(tone_adjustment_loss(shuf, cfg) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("total_loss hand value and ablation identity") {
  CHECK(total_loss(2.0, 100.0, 0.5, 0.013, 0.1) ==
        doctest::Approx(3.35).epsilon(1e-12));
  CHECK(total_loss(1.5, 40.0, 7.0, 0.025, 0.0) ==
        doctest::Approx(1.5 + 0.025 * 40.0).epsilon(1e-12));
}

TEST_CASE("differentiable tone loss matches scalar version and finite differences") {
  Tensor x = testutil::random_image(5, 6, 4242);
  Tensor xb({1, 3, 5, 6});
  for (std::size_t i = 0; i < x.numel(); ++i) xb[i] = x[i];
  TrimConfig cfg{0.1, 0.1};

  ad::Graph g;
  ad::VarId xi = g.input(xb);
  ad::VarId l = ad_ops::tone_adjustment_loss(g, xi, cfg);
  CHECK(g.tape.val(l)[0] ==
        doctest::Approx(tone_adjustment_loss(x, cfg)).epsilon(1e-9));
  REQUIRE(g.tape.val(l)[0] > 1e-3);  // away from the sqrt kink
  g.backward(l);
  const Tensor& grad = g.tape.grad(xi);

  double eps = 1e-3;
  Rng pick(12);
  for (int rep = 0; rep < 12; ++rep) {
    std::size_t i = pick.uniform_int(xb.numel());
    Tensor xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    double fd =
        (tone_adjustment_loss(xp, cfg) - tone_adjustment_loss(xm, cfg)) / (2 * eps);
    double an = grad[i];
    double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
    CHECK(std::abs(fd - an) / denom < 1e-3);
  }
}
