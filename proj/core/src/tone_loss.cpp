#include "hquic/tone_loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "hquic/errors.hpp"

namespace hquic {

std::pair<Tensor, Tensor> opponent_channels(const Tensor& x) {
  if (x.ndim() != 3 || x.dim(0) != 3)
    throw ShapeError("opponent_channels expects (3,H,W), got " + x.shape_str());
  int h = x.dim(1), w = x.dim(2);
  Tensor rg({h, w}), yb({h, w});
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx) {
      double r = x.at3(0, y, xx), g = x.at3(1, y, xx), b = x.at3(2, y, xx);
      rg[static_cast<std::size_t>(y) * w + xx] = r - g;
      yb[static_cast<std::size_t>(y) * w + xx] = (r + g) * 0.5 - b;
    }
  return {std::move(rg), std::move(yb)};
}

double trimmed_mean(const Tensor& values, const TrimConfig& cfg) {
  std::size_t k = values.numel();
  if (k == 0) throw DomainError("trimmed_mean: empty input");
  std::size_t kl = static_cast<std::size_t>(
      std::floor(cfg.alpha_l * static_cast<double>(k)));
  std::size_t kr = static_cast<std::size_t>(
      std::floor(cfg.alpha_r * static_cast<double>(k)));
  if (kl + kr >= k) throw DomainError("trimmed_mean: no elements retained");
  std::vector<double> v(values.data(), values.data() + k);
  std::sort(v.begin(), v.end());
  double acc = 0.0;
  for (std::size_t i = kl; i < k - kr; ++i) acc += v[i];
  return acc / static_cast<double>(k - kl - kr);
}

double tone_adjustment_loss(const Tensor& x_tilde, const TrimConfig& cfg) {
  auto [rg, yb] = opponent_channels(x_tilde);
  double mu_rg = trimmed_mean(rg, cfg);
  double mu_yb = trimmed_mean(yb, cfg);
  return std::sqrt(mu_rg * mu_rg + mu_yb * mu_yb);
}

double total_loss(double rate_bpp, double mse_255, double l_ta, double lambda,
                  double beta) {
  return rate_bpp + lambda * mse_255 + beta * l_ta;
}

namespace ad_ops {

namespace {

// opponent maps for one batch item: x (N,3,H,W) -> (H,W)
ad::VarId opponent_map(ad::Graph& g, ad::VarId x, int n, bool yellow_blue) {
  const Tensor& xv = g.tape.val(x);
  int h = xv.dim(2), w = xv.dim(3);
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx) {
      double r = xv.at4(n, 0, y, xx), gg = xv.at4(n, 1, y, xx),
             b = xv.at4(n, 2, y, xx);
      out[static_cast<std::size_t>(y) * w + xx] =
          yellow_blue ? (r + gg) * 0.5 - b : r - gg;
    }
  return ad::emit_op(g, std::move(out),
                     [x, n, yellow_blue, h, w](ad::Tape& t, ad::VarId id) {
                       const Tensor& go = t.grad(id);
                       Tensor& gx = t.grad(x);
                       for (int y = 0; y < h; ++y)
                         for (int xx = 0; xx < w; ++xx) {
                           double gv = go[static_cast<std::size_t>(y) * w + xx];
                           if (yellow_blue) {
                             gx.at4(n, 0, y, xx) += 0.5 * gv;
                             gx.at4(n, 1, y, xx) += 0.5 * gv;
                             gx.at4(n, 2, y, xx) -= gv;
                           } else {
                             gx.at4(n, 0, y, xx) += gv;
                             gx.at4(n, 1, y, xx) -= gv;
                           }
                         }
                     });
}

}  // namespace

ad::VarId tone_adjustment_loss(ad::Graph& g, ad::VarId x, const TrimConfig& cfg) {
  using namespace ad;
  const Tensor& xv = g.tape.val(x);
  int nb = xv.dim(0);
  VarId acc = -1;
  for (int n = 0; n < nb; ++n) {
    VarId mu_rg = trimmed_mean_op(g, opponent_map(g, x, n, false), cfg.alpha_l,
                                  cfg.alpha_r);
    VarId mu_yb = trimmed_mean_op(g, opponent_map(g, x, n, true), cfg.alpha_l,
                                  cfg.alpha_r);
    VarId l = sqrt_op(g, add(g, square(g, mu_rg), square(g, mu_yb)));
    acc = (acc < 0) ? l : add(g, acc, l);
  }
  return scale(g, acc, 1.0 / nb);
}

}  // namespace ad_ops

}  // namespace hquic
