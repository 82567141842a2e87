#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hquic/nn.hpp"

namespace hquic {

// Fully factorized learned entropy model: one monotone univariate CDF per
// latent channel, built from softplus-positive linear layers with tanh
// gates. likelihood(u) = c(u+0.5) - c(u-0.5), floored at 1e-9.
class EntropyModel {
 public:
  static constexpr int kHidden = 3;
  static constexpr int kMinSymbol = -64;
  static constexpr int kMaxSymbol = 64;
  static constexpr int kNumSymbols = kMaxSymbol - kMinSymbol + 1;
  static constexpr double kLikelihoodFloor = 1e-9;

  EntropyModel(ad::ParamStore& ps, int channels, Rng& rng,
               const std::string& prefix = "entropy");

  int channels() const { return channels_; }

  // y_hat (N,C,H,W) -> per-element likelihoods, same shape
  ad::VarId likelihood(ad::Graph& g, ad::VarId y_hat);

  // plain CDF evaluation from current parameter values
  double cdf(int channel, double u) const;
  double likelihood_scalar(int channel, double u) const;

  // per-channel cumulative tables over [kMinSymbol, kMaxSymbol], each of
  // length kNumSymbols+1 with cum[0]=0 and cum.back()=1<<16
  std::vector<std::vector<std::uint32_t>> freeze_cdf_tables() const;

 private:
  int channels_;
  // per-channel parameter blocks, see .cpp for layout
  ad::Param *h1_, *b1_, *a1_, *h2_, *b2_, *a2_, *h3_, *b3_;
};

// rate in bits per pixel from likelihoods
double estimate_rate_bpp(const Tensor& likelihoods, std::size_t num_pixels);
// differentiable version; likelihoods var -> scalar bpp
ad::VarId estimate_rate_bpp_op(ad::Graph& g, ad::VarId likelihoods,
                               std::size_t num_pixels);

}  // namespace hquic
