#include <doctest.h>

#include <cmath>
#include <functional>

#include "hquic/nn.hpp"
#include "hquic/rng.hpp"

using namespace hquic;

namespace {

Tensor randt(std::vector<int> shape, std::uint64_t seed, double lo = -1.0,
             double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

// central-difference check of a scalar-valued graph against input gradients
void check_input_grad(const Tensor& x,
                      const std::function<ad::VarId(ad::Graph&, ad::VarId)>& f,
                      double tol = 1e-4, double eps = 1e-5) {
  ad::Graph g;
  ad::VarId xi = g.input(x);
  ad::VarId out = f(g, xi);
  REQUIRE(g.tape.val(out).numel() == 1);
  g.backward(out);
  Tensor grad = g.tape.grad(xi);

  Rng pick(4242);
  for (int rep = 0; rep < 10; ++rep) {
    std::size_t i = pick.uniform_int(x.numel());
    Tensor xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    ad::Graph gp, gm;
    double fp = gp.tape.val(f(gp, gp.input(xp)))[0];
    double fm = gm.tape.val(f(gm, gm.input(xm)))[0];
    double fd = (fp - fm) / (2 * eps);
    double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-7});
    CHECK(std::abs(fd - grad[i]) / denom < tol);
  }
}

}  // namespace

TEST_CASE("elementwise and reduction gradients") {
  Tensor x = randt({1, 2, 3, 3}, 1);
  check_input_grad(x, [](ad::Graph& g, ad::VarId v) {
    return ad::mean_all(g, ad::square(g, ad::leaky_relu(g, v)));
  });
  check_input_grad(x, [](ad::Graph& g, ad::VarId v) {
    return ad::sum_all(g, ad::sigmoid(g, v));
  });
  Tensor pos = randt({1, 1, 4, 4}, 2, 0.2, 2.0);
  check_input_grad(pos, [](ad::Graph& g, ad::VarId v) {
    return ad::mean_all(g, ad::log_op(g, v));
  });
  check_input_grad(pos, [](ad::Graph& g, ad::VarId v) {
    return ad::sum_all(g, ad::sqrt_op(g, v));
  });
}

TEST_CASE("conv2d gradients (input, weight, bias)") {
  Tensor x = randt({1, 2, 6, 6}, 3);
  Tensor w = randt({3, 2, 3, 3}, 4, -0.5, 0.5);
  Tensor b = randt({3}, 5, -0.1, 0.1);
  for (int stride : {1, 2}) {
    check_input_grad(x, [&](ad::Graph& g, ad::VarId v) {
      return ad::mean_all(
          g, ad::square(g, ad::conv2d(g, v, g.input(w), g.input(b), stride, 1)));
    });
    check_input_grad(w, [&](ad::Graph& g, ad::VarId v) {
      return ad::mean_all(
          g, ad::square(g, ad::conv2d(g, g.input(x), v, g.input(b), stride, 1)));
    });
    check_input_grad(b, [&](ad::Graph& g, ad::VarId v) {
      return ad::mean_all(
          g, ad::square(g, ad::conv2d(g, g.input(x), g.input(w), v, stride, 1)));
    });
  }
}

TEST_CASE("deconv2d_s2 doubles spatial dims and has correct gradients") {
  Tensor x = randt({1, 3, 4, 4}, 6);
  Tensor w = randt({3, 2, 3, 3}, 7, -0.5, 0.5);
  Tensor b = randt({2}, 8, -0.1, 0.1);
  {
    ad::Graph g;
    ad::VarId out = ad::deconv2d_s2(g, g.input(x), g.input(w), g.input(b));
    const Tensor& o = g.tape.val(out);
    CHECK(o.dim(1) == 2);
    CHECK(o.dim(2) == 8);
    CHECK(o.dim(3) == 8);
  }
  check_input_grad(x, [&](ad::Graph& g, ad::VarId v) {
    return ad::mean_all(g, ad::square(g, ad::deconv2d_s2(g, v, g.input(w), g.input(b))));
  });
  check_input_grad(w, [&](ad::Graph& g, ad::VarId v) {
    return ad::mean_all(g, ad::square(g, ad::deconv2d_s2(g, g.input(x), v, g.input(b))));
  });
}

TEST_CASE("softmax rows sum to one and gradients check out") {
  Tensor x = randt({2, 4, 5}, 9, -2.0, 2.0);
  ad::Graph g;
  ad::VarId s = ad::softmax_lastdim(g, g.input(x));
  const Tensor& sv = g.tape.val(s);
  for (int r = 0; r < 8; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 5; ++c) sum += sv[static_cast<std::size_t>(r * 5 + c)];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
  Tensor probe = randt({2, 4, 5}, 10);
  check_input_grad(x, [&](ad::Graph& gg, ad::VarId v) {
    return ad::sum_all(gg, ad::mul(gg, ad::softmax_lastdim(gg, v), gg.input(probe)));
  });
}

TEST_CASE("attention primitive gradients") {
  Tensor q = randt({2, 4, 6}, 11, -0.7, 0.7);
  Tensor k = randt({2, 4, 6}, 12, -0.7, 0.7);
  check_input_grad(q, [&](ad::Graph& g, ad::VarId v) {
    return ad::mean_all(g, ad::square(g, ad::bmm_nt(g, v, g.input(k))));
  });
  check_input_grad(k, [&](ad::Graph& g, ad::VarId v) {
    ad::VarId attn = ad::bmm_nt(g, g.input(q), v);  // (2,4,4)
    return ad::mean_all(g, ad::square(g, ad::bmm_nn(g, attn, v)));
  });

  Tensor tok = randt({3, 8, 4}, 13);
  check_input_grad(tok, [&](ad::Graph& g, ad::VarId v) {
    ad::VarId h = ad::split_heads(g, v, 2);
    return ad::mean_all(g, ad::square(g, ad::merge_heads(g, h, 2)));
  });

  Tensor fmap = randt({1, 4, 8, 8}, 14);
  check_input_grad(fmap, [&](ad::Graph& g, ad::VarId v) {
    ad::VarId wp = ad::window_partition(g, v, 4);
    ad::VarId back = ad::window_merge(g, wp, 4, 1, 4, 8, 8);
    return ad::mean_all(g, ad::square(g, back));
  });
}

TEST_CASE("window partition/merge and pad/crop are mutual inverses") {
  Tensor fmap = randt({2, 3, 8, 12}, 15);
  ad::Graph g;
  ad::VarId v = g.input(fmap);
  ad::VarId wp = ad::window_partition(g, v, 4);
  ad::VarId back = ad::window_merge(g, wp, 4, 2, 3, 8, 12);
  const Tensor& o = g.tape.val(back);
  REQUIRE(o.same_shape(fmap));
  for (std::size_t i = 0; i < o.numel(); ++i) CHECK(o[i] == fmap[i]);

  ad::VarId padded = ad::pad_spatial(g, v, 3, 2);
  ad::VarId cropped = ad::crop_spatial(g, padded, 8, 12);
  const Tensor& c = g.tape.val(cropped);
  for (std::size_t i = 0; i < c.numel(); ++i) CHECK(c[i] == fmap[i]);
}

TEST_CASE("altc ops gradients") {
  Tensor x = randt({1, 3, 4, 4}, 16, 0.1, 0.9);
  Tensor a = randt({1, 3}, 17, 0.2, 0.8);
  Tensor t = randt({1, 3, 4, 4}, 18, 0.3, 0.95);
  check_input_grad(x, [&](ad::Graph& g, ad::VarId v) {
    return ad::mean_all(
        g, ad::square(g, ad::altc_correct_op(g, v, g.input(a), g.input(t))));
  });
  check_input_grad(a, [&](ad::Graph& g, ad::VarId v) {
    return ad::mean_all(
        g, ad::square(g, ad::altc_correct_op(g, g.input(x), v, g.input(t))));
  });
  check_input_grad(t, [&](ad::Graph& g, ad::VarId v) {
    return ad::mean_all(
        g, ad::square(g, ad::altc_restore_op(g, g.input(x), g.input(a), v)));
  });
}

TEST_CASE("mse_scaled matches the hand formula") {
  Tensor a({1, 1, 1, 2}, {0.5, 0.25});
  Tensor b({1, 1, 1, 2}, {0.25, 0.25});
  ad::Graph g;
  ad::VarId m = ad::mse_scaled(g, g.input(a), g.input(b), 255.0);
  // mean((255*0.25)^2, 0) = 63.75^2/2
  CHECK(g.tape.val(m)[0] == doctest::Approx(63.75 * 63.75 / 2.0).epsilon(1e-12));
}
