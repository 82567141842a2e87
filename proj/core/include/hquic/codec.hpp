#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hquic/altc.hpp"
#include "hquic/entropy_model.hpp"
#include "hquic/fbwt.hpp"
#include "hquic/tone_loss.hpp"

namespace hquic {

// The built-in lambda grid; lambda_index 255 marks a custom value.
inline const std::vector<double> kLambdaGrid = {0.0025, 0.0067, 0.013, 0.025,
                                                0.0483};

struct ModelConfig {
  int n = 64;   // transform width
  int m = 96;   // latent channels
  bool altc_enabled = true;
  AltcConfig altc;
  FbwtConfig fbwt;
  TrimConfig tone;
  double lambda = 0.013;
  double beta = 0.1;
  std::uint64_t seed = 0;

  std::uint8_t lambda_index() const;
  std::string serialize() const;  // flat key=value lines
  static ModelConfig deserialize(const std::string& text);
};

enum class QuantizeMode { kTrain, kEval };

// eval: round half away from zero, clamped to the coder's symbol support;
// train: add seeded uniform noise in [-0.5, 0.5)
Tensor quantize(const Tensor& y, QuantizeMode mode, std::uint64_t seed = 0);
// the noise tensor used by train-mode quantization (for graph composition)
Tensor quantize_noise(const std::vector<int>& shape, std::uint64_t seed);

struct Bitstream {
  std::uint8_t version = 1;
  std::uint8_t flags = 0;  // bit0 = altc side info present
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint8_t lambda_index = 0;
  std::uint64_t param_hash = 0;
  std::vector<std::uint8_t> side_info;
  std::vector<std::uint8_t> payload;

  std::vector<std::uint8_t> serialize() const;
  static Bitstream deserialize(const std::vector<std::uint8_t>& bytes);
  void write_file(const std::string& path) const;
  static Bitstream read_file(const std::string& path);

  std::size_t total_bytes() const;
  double bpp() const;
};

// Full codec model: ALTC wrapper, FBWT-augmented transforms, factorized
// entropy model. The downsampling factor of the transforms is 16.
class Model {
 public:
  static constexpr int kStride = 16;

  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }
  Altc* altc() { return altc_.get(); }
  EntropyModel& entropy() { return *entropy_; }

  // graph-building forward passes; x (N,3,H,W) with dims multiples of 16
  ad::VarId analysis(ad::Graph& g, ad::VarId x);
  // y (N,M,H/16,W/16) -> (N,3,H,W)
  ad::VarId synthesis(ad::Graph& g, ad::VarId y);

  // plain-tensor wrappers around single-image graphs (no gradients)
  Tensor analysis_t(const Tensor& x);       // (3,H,W) -> (M,h,w)
  Tensor synthesis_t(const Tensor& y_hat);  // (M,h,w) -> (3,H,W)
  // A (3), t (3,H,W) from the estimators
  std::pair<Tensor, Tensor> estimate_side(const Tensor& x);

  std::uint64_t param_hash() const;

  // integer CDF tables are frozen from the entropy model on demand and
  // invalidated by refreeze() after parameter updates
  const std::vector<std::vector<std::uint32_t>>& frozen_tables();
  void set_frozen_tables(std::vector<std::vector<std::uint32_t>> tables);
  void refreeze() { tables_.reset(); }

 private:
  ModelConfig cfg_;
  ad::ParamStore params_;
  std::unique_ptr<Altc> altc_;
  std::unique_ptr<EntropyModel> entropy_;
  std::vector<std::unique_ptr<FbwtBlock>> enc_fbwt_, dec_fbwt_;
  ad::Param *ew_[4], *eb_[4], *dw_[4], *db_[4];
  std::optional<std::vector<std::vector<std::uint32_t>>> tables_;
};

struct CompressFlags {
  bool no_altc = false;
};

Bitstream compress(const Tensor& image, Model& model,
                   const CompressFlags& flags = {});
Tensor decompress(const Bitstream& bs, Model& model);

// entropy-code / decode a latent tensor with the model's frozen tables
std::vector<std::uint8_t> encode_latents(const Tensor& y_hat, Model& model);
Tensor decode_latents(const std::vector<std::uint8_t>& payload, Model& model,
                      int h_lat, int w_lat);

}  // namespace hquic
