#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hquic/codec.hpp"

namespace hquic {

struct TrainConfig {
  double lambda = 0.013;
  double beta = 0.1;
  double learning_rate = 1e-4;
  double grad_clip = 10.0;  // global gradient-norm cap; <= 0 disables
  int batch_size = 8;
  int steps = 300;
  std::uint64_t seed = 0;
  int crop = 256;  // must be a multiple of the transform stride (16)
  bool no_altc = false;
  bool no_fbwt = false;
  // architecture knobs forwarded into ModelConfig
  int n = 64;
  int m = 96;

  ModelConfig model_config() const;
  void validate() const;
};

struct LossComponents {
  double rate = 0.0;
  double mse255 = 0.0;
  double lta = 0.0;
  double total = 0.0;
};

// One forward/backward/update pass over a batch (N,3,H,W). noise_seed feeds
// the additive-noise quantizer; adam_t is the 1-based update count for bias
// correction. learning_rate 0 leaves parameters untouched.
LossComponents train_step(Model& model, const Tensor& batch,
                          const TrainConfig& cfg, std::uint64_t noise_seed,
                          int adam_t);

// Loss evaluation without quantization noise and without updates; used for
// eval-time distortion probes (perfect-latent reconstruction).
LossComponents eval_loss(Model& model, const Tensor& batch, const TrainConfig& cfg);

class MetricsLog {
 public:
  // truncate=true writes the CSV header; false appends to an existing log
  explicit MetricsLog(const std::string& path, bool truncate = true);
  static MetricsLog append_only(const std::string& path) {
    return MetricsLog(path, false);
  }
  void append(int step, const LossComponents& l);

 private:
  std::string path_;
};

// dataset: every readable image in the directory, sorted by filename
std::vector<Tensor> load_dataset(const std::string& dir);

// Seed-deterministic batch assembly for an absolute step index.
Tensor make_batch(const std::vector<Tensor>& dataset, const TrainConfig& cfg,
                  int step);

// Full loop: resumable from an existing checkpoint at `checkpoint_path`
// (pass resume=true), writes checkpoint plus CSV metrics log.
void train_model(const std::string& dataset_dir, const TrainConfig& cfg,
                 const std::string& checkpoint_path, const std::string& log_path,
                 bool resume = false);

// One model per lambda, shared seed/config; checkpoints land in out_dir as
// ckpt_lambda_<value>.hqck
std::vector<std::string> rd_sweep(const std::string& dataset_dir,
                                  const std::vector<double>& lambdas,
                                  const TrainConfig& cfg,
                                  const std::string& out_dir);

}  // namespace hquic
