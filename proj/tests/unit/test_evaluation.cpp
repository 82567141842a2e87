#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "hquic/evaluation.hpp"
#include "hquic/image.hpp"
#include "testutil.hpp"

using namespace hquic;

TEST_CASE("psnr analytic cases") {
  Tensor x = testutil::random_image(16, 16, 1);
  for (std::size_t i = 0; i < x.numel(); ++i)
    x[i] = std::floor(x[i] * 255.0) / 255.0;  // 8-bit grid, room for +1 step

  SUBCASE("one-step offset gives 20*log10(255)") {
    Tensor y = x;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += 1.0 / 255.0;
    CHECK(psnr(x, y) == doctest::Approx(20.0 * std::log10(255.0)).epsilon(1e-9));
    CHECK(std::abs(psnr(x, y) - 48.1308) < 1e-3);
  }
  SUBCASE("identical images are infinite") {
    CHECK(std::isinf(psnr(x, x)));
  }
  SUBCASE("0.5 vs 0 quantizes to 128 steps") {
    Tensor a({3, 2, 2}), b({3, 2, 2});
    a.fill(0.5);
    b.fill(0.0);
    CHECK(psnr(a, b) ==
          doctest::Approx(20.0 * std::log10(255.0 / 128.0)).epsilon(1e-9));
  }
}

TEST_CASE("ms-ssim self similarity, symmetry, and degradation") {
  Tensor x = testutil::smooth_image(96, 96, 2);
  MsSsimResult self = ms_ssim(x, x);
  CHECK(std::abs(self.value - 1.0) < 1e-9);
  CHECK(self.scales_used >= 1);

  Rng rng(3);
  double prev = 1.0;
  for (double amp : {0.01, 0.05, 0.15}) {
    Tensor y = x;
    Rng nr(77);
    for (std::size_t i = 0; i < y.numel(); ++i)
      y[i] += amp * (nr.uniform() * 2.0 - 1.0);
    double v = ms_ssim(x, y).value;
    double sym = ms_ssim(y, x).value;
    CHECK(std::abs(v - sym) < 1e-9);
    CHECK(v < prev);
    prev = v;
  }
  CHECK(prev < 1.0);
  (void)rng;
}

TEST_CASE("ms-ssim drops scales for small inputs") {
  Tensor x = testutil::smooth_image(24, 24, 4);
  MsSsimResult r = ms_ssim(x, x);
  CHECK(r.scales_used < 5);
  CHECK(std::abs(r.value - 1.0) < 1e-9);
}

TEST_CASE("bd-rate oracle cases") {
  std::vector<RateQuality> anchor;
  for (double q : {30.0, 32.0, 34.0, 36.0, 38.0})
    anchor.push_back({0.05 * std::exp(0.18 * (q - 30.0)), q});

  SUBCASE("identical curves give zero") {
    CHECK(std::abs(bd_rate(anchor, anchor)) < 1e-9);
  }
  SUBCASE("doubled rate gives +100 percent") {
    auto twice = anchor;
    for (auto& p : twice) p.rate *= 2.0;
    CHECK(std::abs(bd_rate(anchor, twice) - 100.0) < 0.1);
  }
  SUBCASE("halved rate gives -50 percent") {
    auto half = anchor;
    for (auto& p : half) p.rate *= 0.5;
    CHECK(std::abs(bd_rate(anchor, half) + 50.0) < 0.05);
  }
  SUBCASE("log-domain anti-symmetry") {
    std::vector<RateQuality> other;
    for (double q : {30.5, 32.5, 34.5, 36.5})
      other.push_back({0.07 * std::exp(0.16 * (q - 30.0)), q});
    double ab = bd_rate(anchor, other);
    double ba = bd_rate(other, anchor);
    CHECK(std::abs(std::log1p(ab / 100.0) + std::log1p(ba / 100.0)) < 1e-6);
  }
  SUBCASE("disjoint quality ranges are rejected") {
    std::vector<RateQuality> far;
    for (double q : {80.0, 82.0, 84.0, 86.0}) far.push_back({1.0, q});
    CHECK_THROWS(bd_rate(anchor, far));
  }
}

TEST_CASE("channel stats on a constant gray image") {
  testutil::TempDir tmp("cstats");
  Tensor gray({3, 8, 8});
  gray.fill(128.0 / 255.0);
  save_image(tmp.file("g.png"), gray);
  ChannelStats st = channel_stats(tmp.path());
  for (int c = 0; c < 3; ++c) {
    CHECK(st.mean[c] == doctest::Approx(128.0 / 255.0).epsilon(1e-9));
    CHECK(st.median[c] == doctest::Approx(128.0 / 255.0).epsilon(1e-9));
    CHECK(st.histogram[c][128] == 64);
  }
  CHECK(st.pixel_count == 64);
}

TEST_CASE("channel stats histogram mass equals total pixels") {
  testutil::TempDir tmp("cmass");
  save_image(tmp.file("a.png"), testutil::random_image(10, 12, 5));
  save_image(tmp.file("b.png"), testutil::random_image(7, 9, 6));
  ChannelStats st = channel_stats(tmp.path());
  CHECK(st.pixel_count == 10u * 12 + 7u * 9);
  for (int c = 0; c < 3; ++c) {
    std::uint64_t mass = 0;
    for (auto v : st.histogram[c]) mass += v;
    CHECK(mass == st.pixel_count);
  }
}

TEST_CASE("blue-green-shifted set shows the depressed red channel") {
  testutil::TempDir tmp("shift");
  Rng rng(8);
  for (int i = 0; i < 3; ++i) {
    Tensor img({3, 16, 16});
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        img.at3(0, y, x) = 0.15 * rng.uniform();
        img.at3(1, y, x) = 0.4 + 0.5 * rng.uniform();
        img.at3(2, y, x) = 0.5 + 0.5 * rng.uniform();
      }
    save_image(tmp.file("u" + std::to_string(i) + ".png"), img);
  }
  ChannelStats st = channel_stats(tmp.path());
  CHECK(st.mean[0] < st.mean[1]);
  CHECK(st.mean[0] < st.mean[2]);
}

TEST_CASE("evaluate_model is deterministic and consistent across jobs") {
  testutil::TempDir tmp("evalds");
  for (int i = 0; i < 3; ++i)
    save_image(tmp.file("x" + std::to_string(i) + ".png"),
               testutil::smooth_image(48, 48, 20 + static_cast<std::uint64_t>(i)));
  ModelConfig cfg;
  cfg.n = 8;
  cfg.m = 12;
  cfg.seed = 9;
  Model model(cfg);
  EvalResult a = evaluate_model(model, tmp.path(), 1);
  EvalResult b = evaluate_model(model, tmp.path(), 2);
  REQUIRE(a.per_image.size() == 3);
  REQUIRE(b.per_image.size() == 3);
  double bits = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.per_image[i].point.bpp == b.per_image[i].point.bpp);
    CHECK(a.per_image[i].point.psnr == b.per_image[i].point.psnr);
    CHECK(a.per_image[i].point.ms_ssim == b.per_image[i].point.ms_ssim);
    bits += a.per_image[i].point.bpp;
  }
  CHECK(a.mean.bpp == doctest::Approx(bits / 3.0).epsilon(1e-12));

  // file-path PSNR equals in-memory PSNR for a compressed image
  Tensor img = load_image(a.per_image[0].file);
  Bitstream bs = compress(img, model);
  bs.write_file(tmp.file("x.hquc"));
  Bitstream back = Bitstream::read_file(tmp.file("x.hquc"));
  Tensor rec = decompress(back, model);
  CHECK(psnr(img, rec) == doctest::Approx(a.per_image[0].point.psnr).epsilon(1e-12));
}

TEST_CASE("plots are written as readable image files") {
  testutil::TempDir tmp("plots");
  std::vector<RateQuality> curve = {{0.1, 30.0}, {0.2, 33.0}, {0.4, 36.0}, {0.8, 39.0}};
  plot_rd_curves(tmp.file("rd.png"), "PSNR (dB)", {{"demo", curve}});
  Tensor plot = load_image(tmp.file("rd.png"));
  CHECK(plot.dim(1) > 100);

  Tensor gray({3, 8, 8});
  gray.fill(0.5);
  save_image(tmp.file("g.png"), gray);
  ChannelStats st = channel_stats(tmp.path());
  plot_channel_distributions(tmp.file("hist.png"), {{"demo", st}});
  CHECK(load_image(tmp.file("hist.png")).dim(1) > 100);
}
