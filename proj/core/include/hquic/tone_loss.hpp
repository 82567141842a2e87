#pragma once

#include <utility>

#include "hquic/nn.hpp"
#include "hquic/tensor.hpp"

namespace hquic {

struct TrimConfig {
  double alpha_l = 0.1;
  double alpha_r = 0.1;
};

// RG = R - G, YB = (R+G)/2 - B; input (3,H,W), outputs (H,W)
std::pair<Tensor, Tensor> opponent_channels(const Tensor& x);

// sort ascending, drop floor(aL*K) lowest / floor(aR*K) highest, mean of rest
double trimmed_mean(const Tensor& values, const TrimConfig& cfg);

// sqrt(mu_RG^2 + mu_YB^2) on a (3,H,W) image
double tone_adjustment_loss(const Tensor& x_tilde, const TrimConfig& cfg);

// rate + lambda*mse_255 + beta*l_ta
double total_loss(double rate_bpp, double mse_255, double l_ta, double lambda,
                  double beta);

namespace ad_ops {

// differentiable tone adjustment loss; x (N,3,H,W), per-batch mean of the
// per-image losses
ad::VarId tone_adjustment_loss(ad::Graph& g, ad::VarId x, const TrimConfig& cfg);

}  // namespace ad_ops

}  // namespace hquic
