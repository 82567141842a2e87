#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hquic/nn.hpp"
#include "hquic/tensor.hpp"

namespace hquic {

struct AltcConfig {
  int hidden = 8;
  double t_min = 0.05;
  int side_downsample = 16;  // s
};

// Quantized illumination/transmission side information, transmitted losslessly.
struct SideInfo {
  std::uint8_t s = 16;
  std::uint16_t height = 0;  // full-resolution dims of t
  std::uint16_t width = 0;
  std::array<std::uint16_t, 3> a_q{};       // round(A*65535)
  std::vector<std::uint8_t> t_q;            // (3, H/s, W/s), round(t*255)

  // wire layout (little-endian):
  // [s:u8][H:u16][W:u16][A_q:3*u16][len:u32][zlib-compressed t_q]
  std::vector<std::uint8_t> serialize() const;
  static SideInfo deserialize(const std::vector<std::uint8_t>& bytes);

  Tensor dequantize_a() const;  // (3)
  Tensor dequantize_t(double t_min) const;  // (3,H,W), nearest-neighbor upsample
};

// Adaptive lighting and tone correction around the codec. Estimators are
// small convnets trained jointly with the rest of the model.
class Altc {
 public:
  Altc(ad::ParamStore& ps, const AltcConfig& cfg, Rng& rng,
       const std::string& prefix = "altc");

  // x: (N,3,H,W) -> (N,3)
  ad::VarId estimate_illumination(ad::Graph& g, ad::VarId x);
  // x: (N,3,H,W) -> (N,3,H,W), values in [t_min,1]
  ad::VarId estimate_transmission(ad::Graph& g, ad::VarId x);

  const AltcConfig& config() const { return cfg_; }

 private:
  AltcConfig cfg_;
  ad::Param *ea_w1_, *ea_b1_, *ea_w2_, *ea_b2_, *ea_w3_, *ea_b3_;
  ad::Param *ea_fc_w_, *ea_fc_b_;
  ad::Param *et_w1_, *et_b1_, *et_w2_, *et_b2_, *et_w3_, *et_b3_, *et_w4_, *et_b4_;
};

// Eq.-style correction/restoration on plain tensors (no gradients).
// x, t: (3,H,W); a: (3). Output is intentionally unclamped.
Tensor altc_correct(const Tensor& x, const Tensor& a, const Tensor& t,
                    double t_min = 0.05);
Tensor altc_restore(const Tensor& x_tilde_hat, const Tensor& a, const Tensor& t,
                    double t_min = 0.05);

// Quantize network outputs into side info. a: (3), t: (3,H,W); s must divide
// H and W.
SideInfo encode_side_info(const Tensor& a, const Tensor& t, int s);

}  // namespace hquic
