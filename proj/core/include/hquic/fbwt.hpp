#pragma once

#include <array>
#include <string>

#include "hquic/nn.hpp"

namespace hquic {

enum class FbwtMerge { kIdwt, kConcat };

struct FbwtConfig {
  bool enabled = true;
  FbwtMerge merge_mode = FbwtMerge::kIdwt;
  int window = 4;
  int heads = 4;
};

// Frequency-based weighted transformer block: single-level Haar split,
// one windowed-attention expert per sub-band, gate-weighted merge back to
// the input shape, plus a residual connection.
class FbwtBlock {
 public:
  FbwtBlock(ad::ParamStore& ps, int channels, const FbwtConfig& cfg, Rng& rng,
            const std::string& prefix);

  // (N,C,H,W) -> (N,4) softmax gate weights, order LL,LH,HL,HH
  ad::VarId gate_weights(ad::Graph& g, ad::VarId f);
  // shape-preserving expert for one sub-band
  ad::VarId expert_attention(ad::Graph& g, ad::VarId band, int band_index);
  // full block: f + Merge_i(4*w_i * Attn_i(DWT(f)_i))
  ad::VarId forward(ad::Graph& g, ad::VarId f);

  int channels() const { return channels_; }

 private:
  int channels_;
  FbwtConfig cfg_;
  ad::Param *gate_w_, *gate_b_;
  struct Expert {
    ad::Param *wq, *wk, *wv, *wo, *ff_w1, *ff_b1, *ff_w2, *ff_b2;
  };
  std::array<Expert, 4> experts_;
  ad::Param* concat_proj_w_ = nullptr;  // concat merge mode only
  ad::Param* concat_proj_b_ = nullptr;
};

}  // namespace hquic
