#include "hquic/training.hpp"

#include "hquic/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hquic/errors.hpp"
#include "hquic/image.hpp"

namespace hquic {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = seed ^ 0x2545F4914F6CDD1Dull;
  h ^= a * 0x9E3779B97F4A7C15ull;
  h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9ull;
  h ^= b * 0x94D049BB133111EBull;
  h = (h ^ (h >> 27)) * 0x94D049BB133111EBull;
  return h ^ (h >> 31);
}

struct ForwardResult {
  ad::VarId rate, mse, lta, total;
};

// ALTC correct -> analysis -> quantize -> likelihoods -> synthesis ->
// ALTC restore; distortion before any clamping.
ForwardResult build_loss(ad::Graph& g, Model& model, ad::VarId x,
                         const TrainConfig& cfg, bool with_noise,
                         std::uint64_t noise_seed) {
  using namespace ad;
  const Tensor& xv = g.tape.val(x);
  std::size_t num_pixels = static_cast<std::size_t>(xv.dim(0)) * xv.dim(2) *
                           static_cast<std::size_t>(xv.dim(3));
  bool use_altc = model.config().altc_enabled && !cfg.no_altc;
  VarId x_tilde = x;
  VarId a = -1, t = -1;
  if (use_altc) {
    a = model.altc()->estimate_illumination(g, x);
    t = model.altc()->estimate_transmission(g, x);
    // train against the transport-resolution transmission map, matching the
    // block-pooled side info the codec ships
    t = block_avg_op(g, t, model.config().altc.side_downsample);
    x_tilde = altc_correct_op(g, x, a, t);
  }
  VarId y = model.analysis(g, x_tilde);
  VarId y_hat = y;
  if (with_noise)
    y_hat = add_const(g, y, quantize_noise(g.tape.val(y).shape(), noise_seed));
  VarId p = model.entropy().likelihood(g, y_hat);
  VarId rate = estimate_rate_bpp_op(g, p, num_pixels);
  VarId x_tilde_hat = model.synthesis(g, y_hat);
  VarId x_hat = use_altc ? altc_restore_op(g, x_tilde_hat, a, t) : x_tilde_hat;
  VarId mse = mse_scaled(g, x, x_hat, 255.0);
  VarId lta = ad_ops::tone_adjustment_loss(g, x_tilde, model.config().tone);
  VarId total = add(g, rate, add(g, scale(g, mse, cfg.lambda),
                                 scale(g, lta, cfg.beta)));
  return {rate, mse, lta, total};
}

// cap the global gradient norm; attention layers occasionally emit spikes
// that would otherwise poison the Adam moment estimates
void clip_grad_norm(ad::ParamStore& ps, double max_norm) {
  double sq = 0.0;
  for (ad::Param* p : ps.all())
    for (std::size_t i = 0; i < p->grad.numel(); ++i) sq += p->grad[i] * p->grad[i];
  double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  double s = max_norm / norm;
  for (ad::Param* p : ps.all())
    for (std::size_t i = 0; i < p->grad.numel(); ++i) p->grad[i] *= s;
}

void adam_update(ad::ParamStore& ps, double lr, int t) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double c1 = 1.0 - std::pow(b1, t);
  double c2 = 1.0 - std::pow(b2, t);
  for (ad::Param* p : ps.all()) {
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      double grad = p->grad[i];
      p->adam_m[i] = b1 * p->adam_m[i] + (1.0 - b1) * grad;
      p->adam_v[i] = b2 * p->adam_v[i] + (1.0 - b2) * grad * grad;
      double mhat = p->adam_m[i] / c1;
      double vhat = p->adam_v[i] / c2;
      p->value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace

ModelConfig TrainConfig::model_config() const {
  ModelConfig mc;
  mc.n = n;
  mc.m = m;
  mc.lambda = lambda;
  mc.beta = beta;
  mc.seed = seed;
  mc.altc_enabled = !no_altc;
  mc.fbwt.enabled = !no_fbwt;
  return mc;
}

void TrainConfig::validate() const {
  if (lambda <= 0.0) throw ConfigError("lambda must be positive");
  if (learning_rate < 0.0) throw ConfigError("learning rate must be >= 0");
  if (crop < 32 || crop % Model::kStride)
    throw ConfigError("crop must be >= 32 and a multiple of 16");
  if (batch_size < 1 || steps < 0) throw ConfigError("bad batch size or steps");
}

LossComponents train_step(Model& model, const Tensor& batch,
                          const TrainConfig& cfg, std::uint64_t noise_seed,
                          int adam_t) {
  ad::Graph g;
  ad::VarId x = g.input(batch);
  ForwardResult r = build_loss(g, model, x, cfg, true, noise_seed);
  LossComponents out{g.tape.val(r.rate)[0], g.tape.val(r.mse)[0],
                     g.tape.val(r.lta)[0], g.tape.val(r.total)[0]};
  if (!std::isfinite(out.total))
    throw std::runtime_error(
        "non-finite training loss: rate=" + std::to_string(out.rate) +
        " mse255=" + std::to_string(out.mse255) +
        " lta=" + std::to_string(out.lta));
  model.params().zero_grad();
  g.backward(r.total);
  if (cfg.learning_rate > 0.0) {
    if (cfg.grad_clip > 0.0) clip_grad_norm(model.params(), cfg.grad_clip);
    adam_update(model.params(), cfg.learning_rate, adam_t);
    model.refreeze();
  }
  return out;
}

LossComponents eval_loss(Model& model, const Tensor& batch,
                         const TrainConfig& cfg) {
  ad::Graph g;
  ad::VarId x = g.input(batch);
  ForwardResult r = build_loss(g, model, x, cfg, false, 0);
  return {g.tape.val(r.rate)[0], g.tape.val(r.mse)[0], g.tape.val(r.lta)[0],
          g.tape.val(r.total)[0]};
}

MetricsLog::MetricsLog(const std::string& path, bool truncate) : path_(path) {
  if (truncate) {
    std::ofstream f(path_);
    f << "step,rate,mse255,lta,total\n";
  }
}

void MetricsLog::append(int step, const LossComponents& l) {
  std::ofstream f(path_, std::ios::app);
  f << step << "," << l.rate << "," << l.mse255 << "," << l.lta << ","
    << l.total << "\n";
}

std::vector<Tensor> load_dataset(const std::string& dir) {
  if (!std::filesystem::is_directory(dir))
    throw ConfigError("dataset directory does not exist: " + dir);
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp")
      files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  std::vector<Tensor> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_image(f));
  if (out.empty()) throw ConfigError("no readable images in " + dir);
  return out;
}

Tensor make_batch(const std::vector<Tensor>& dataset, const TrainConfig& cfg,
                  int step) {
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(step), 0xBA7C));
  Tensor batch({cfg.batch_size, 3, cfg.crop, cfg.crop});
  for (int b = 0; b < cfg.batch_size; ++b) {
    const Tensor& img =
        dataset[rng.uniform_int(static_cast<std::uint64_t>(dataset.size()))];
    if (img.dim(1) < cfg.crop || img.dim(2) < cfg.crop)
      throw ConfigError("dataset image smaller than crop size");
    Tensor crop = random_crop(img, cfg.crop, rng.next_u64());
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < cfg.crop; ++y)
        for (int x = 0; x < cfg.crop; ++x)
          batch.at4(b, c, y, x) = crop.at3(c, y, x);
  }
  return batch;
}

void train_model(const std::string& dataset_dir, const TrainConfig& cfg,
                 const std::string& checkpoint_path, const std::string& log_path,
                 bool resume) {
  cfg.validate();
  std::vector<Tensor> dataset = load_dataset(dataset_dir);
  if (static_cast<int>(dataset.size()) < 1)
    throw ConfigError("dataset too small");
  std::unique_ptr<Model> model;
  std::int64_t start_step = 0;
  if (resume) {
    auto loaded = load_checkpoint(checkpoint_path);
    model = std::move(loaded.model);
    start_step = loaded.step;
  } else {
    model = std::make_unique<Model>(cfg.model_config());
  }
  MetricsLog log(log_path, !resume);
  for (int step = static_cast<int>(start_step); step < cfg.steps; ++step) {
    Tensor batch = make_batch(dataset, cfg, step);
    std::uint64_t noise_seed =
        mix_seed(cfg.seed, static_cast<std::uint64_t>(step), 0x11CE);
    LossComponents l = train_step(*model, batch, cfg, noise_seed, step + 1);
    log.append(step, l);
  }
  save_checkpoint(checkpoint_path, *model, cfg.steps);
}

std::vector<std::string> rd_sweep(const std::string& dataset_dir,
                                  const std::vector<double>& lambdas,
                                  const TrainConfig& cfg,
                                  const std::string& out_dir) {
  if (lambdas.size() < 2) throw ConfigError("rd_sweep needs at least 2 lambdas");
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> paths;
  for (double l : lambdas) {
    TrainConfig c = cfg;
    c.lambda = l;
    std::ostringstream name;
    name << out_dir << "/ckpt_lambda_" << l << ".hqck";
    train_model(dataset_dir, c, name.str(),
                out_dir + "/log_lambda_" + std::to_string(l) + ".csv");
    paths.push_back(name.str());
  }
  return paths;
}

}  // namespace hquic
