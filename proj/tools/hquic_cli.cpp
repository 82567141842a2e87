#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hquic/checkpoint.hpp"
#include "hquic/codec.hpp"
#include "hquic/errors.hpp"
#include "hquic/evaluation.hpp"
#include "hquic/image.hpp"
#include "hquic/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIncompatible = 3;
constexpr int kExitData = 4;

// flat key=value config file, applied between defaults and flags
void apply_config_file(const std::string& path, hquic::TrainConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw hquic::ConfigError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto h = line.find('#');
    if (h != std::string::npos) line.erase(h);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw hquic::ConfigError(path + ":" + std::to_string(lineno) +
                               ": expected key=value");
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "lambda") cfg.lambda = std::stod(val);
      else if (key == "beta") cfg.beta = std::stod(val);
      else if (key == "learning_rate") cfg.learning_rate = std::stod(val);
      else if (key == "batch_size") cfg.batch_size = std::stoi(val);
      else if (key == "steps") cfg.steps = std::stoi(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else if (key == "crop") cfg.crop = std::stoi(val);
      else if (key == "n") cfg.n = std::stoi(val);
      else if (key == "m") cfg.m = std::stoi(val);
      else if (key == "no_altc") cfg.no_altc = (val == "1" || val == "true");
      else if (key == "no_fbwt") cfg.no_fbwt = (val == "1" || val == "true");
      else
        throw hquic::ConfigError(path + ": unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw hquic::ConfigError(path + ": bad value for '" + key + "'");
    }
  }
}

std::string lambda_tag(double lambda) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", lambda);
  return buf;
}

json config_json(const hquic::ModelConfig& cfg) {
  json j;
  std::istringstream in(cfg.serialize());
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return j;
}

char hex_digit(std::uint64_t v) {
  return "0123456789abcdef"[v & 0xF];
}

std::string hash_string(std::uint64_t h) {
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = hex_digit(h);
    h >>= 4;
  }
  return s;
}

// anchor CSV: header "bpp,quality" (or bare pairs), one point per line
std::vector<hquic::RateQuality> read_anchor_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw hquic::ConfigError("cannot open anchor CSV: " + path);
  std::vector<hquic::RateQuality> pts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.find_first_of("0123456789") == std::string::npos) continue;  // header
    std::istringstream ls(line);
    std::string a, b;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ','))
      throw hquic::ConfigError("malformed anchor CSV line: " + line);
    try {
      pts.push_back({std::stod(a), std::stod(b)});
    } catch (const std::invalid_argument&) {
      throw hquic::ConfigError("malformed anchor CSV line: " + line);
    }
  }
  if (pts.size() < 4)
    throw hquic::ConfigError("anchor CSV needs at least 4 points: " + path);
  return pts;
}

int cmd_train(const std::string& data_dir, hquic::TrainConfig cfg, bool sweep,
              const std::string& ckpt, const std::string& ckpt_dir,
              const std::string& log_path, bool resume) {
  cfg.validate();
  if (sweep) {
    fs::create_directories(ckpt_dir);
    auto paths = hquic::rd_sweep(data_dir, hquic::kLambdaGrid, cfg, ckpt_dir);
    for (const auto& p : paths) std::cout << "checkpoint: " << p << "\n";
  } else {
    std::string log = log_path.empty() ? ckpt + ".metrics.csv" : log_path;
    hquic::train_model(data_dir, cfg, ckpt, log, resume);
    std::cout << "checkpoint: " << ckpt << "\nmetrics: " << log << "\n";
  }
  return kExitOk;
}

int cmd_compress(const std::string& ckpt, const std::vector<std::string>& inputs,
                 const std::string& out_path, bool no_altc) {
  auto loaded = hquic::load_checkpoint(ckpt);
  hquic::CompressFlags flags;
  flags.no_altc = no_altc;
  for (const auto& in : inputs) {
    hquic::Tensor img = hquic::load_image(in);
    hquic::Bitstream bs = hquic::compress(img, *loaded.model, flags);
    std::string out = out_path;
    if (out.empty() || inputs.size() > 1)
      out = (out_path.empty() ? fs::path(in) : fs::path(out_path) / fs::path(in).filename())
                .replace_extension(".hquc")
                .string();
    bs.write_file(out);
    hquic::Tensor rec = hquic::decompress(bs, *loaded.model);
    std::printf("%s: %dx%d bpp=%.4f psnr=%.4f -> %s\n", in.c_str(), img.dim(2),
                img.dim(1), bs.bpp(), hquic::psnr(img, rec), out.c_str());
  }
  return kExitOk;
}

int cmd_decompress(const std::string& ckpt, const std::string& input,
                   const std::string& out_path) {
  auto loaded = hquic::load_checkpoint(ckpt);
  hquic::Bitstream bs = hquic::Bitstream::read_file(input);
  // decode fully before creating the output file so failures leave nothing behind
  hquic::Tensor img = hquic::decompress(bs, *loaded.model);
  hquic::save_image(out_path, img);
  std::printf("%s: %dx%d -> %s\n", input.c_str(), img.dim(2), img.dim(1),
              out_path.c_str());
  return kExitOk;
}

int cmd_eval(std::vector<std::string> ckpts, const std::string& ckpt_dir,
             const std::string& data_dir, const std::string& anchor_csv,
             const std::string& out_dir, int jobs) {
  if (!ckpt_dir.empty()) {
    for (const auto& e : fs::directory_iterator(ckpt_dir))
      if (e.is_regular_file() && e.path().extension() == ".hqck")
        ckpts.push_back(e.path().string());
    std::sort(ckpts.begin(), ckpts.end());
  }
  if (ckpts.empty()) throw hquic::ConfigError("no checkpoints to evaluate");
  fs::create_directories(out_dir);

  json summary;
  summary["dataset"] = data_dir;
  std::vector<hquic::RateQuality> curve_psnr, curve_msssim;
  std::ofstream table(fs::path(out_dir) / "rd_table.csv");
  table << "checkpoint,file,bpp,psnr,ms_ssim\n";
  for (const auto& cp : ckpts) {
    auto loaded = hquic::load_checkpoint(cp);
    auto res = hquic::evaluate_model(*loaded.model, data_dir, jobs);
    for (const auto& row : res.per_image)
      table << cp << "," << row.file << "," << row.point.bpp << ","
            << row.point.psnr << "," << row.point.ms_ssim << "\n";
    json ent;
    ent["checkpoint"] = cp;
    ent["config"] = config_json(loaded.model->config());
    ent["param_hash"] = hash_string(loaded.model->param_hash());
    ent["mean_bpp"] = res.mean.bpp;
    ent["mean_psnr"] = res.mean.psnr;
    ent["mean_ms_ssim"] = res.mean.ms_ssim;
    summary["models"].push_back(ent);
    curve_psnr.push_back({res.mean.bpp, res.mean.psnr});
    curve_msssim.push_back({res.mean.bpp, res.mean.ms_ssim});
    std::printf("%s: bpp=%.4f psnr=%.4f ms-ssim=%.6f\n", cp.c_str(),
                res.mean.bpp, res.mean.psnr, res.mean.ms_ssim);
  }
  if (!anchor_csv.empty()) {
    auto anchor = read_anchor_csv(anchor_csv);
    double bd = hquic::bd_rate(anchor, curve_psnr);
    summary["bd_rate_vs_anchor_percent"] = bd;
    std::printf("bd-rate vs anchor: %+.2f%%\n", bd);
  }
  if (curve_psnr.size() >= 2) {
    hquic::plot_rd_curves((fs::path(out_dir) / "rd_psnr.png").string(),
                          "PSNR (dB)", {{"model", curve_psnr}});
    hquic::plot_rd_curves((fs::path(out_dir) / "rd_ms_ssim.png").string(),
                          "MS-SSIM", {{"model", curve_msssim}});
  }
  std::ofstream((fs::path(out_dir) / "summary.json").string()) << summary.dump(2) << "\n";
  std::cout << "report: " << (fs::path(out_dir) / "summary.json").string() << "\n";
  return kExitOk;
}

int cmd_stats(const std::vector<std::string>& data_dirs, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<std::pair<std::string, hquic::ChannelStats>> all;
  json report;
  for (const auto& d : data_dirs) {
    auto st = hquic::channel_stats(d);
    json ent;
    ent["dataset"] = d;
    for (int c = 0; c < 3; ++c) {
      const char* names[3] = {"r", "g", "b"};
      ent[names[c]] = {{"mean", st.mean[c]},
                       {"median", st.median[c]},
                       {"q1", st.q1[c]},
                       {"q3", st.q3[c]}};
    }
    ent["pixel_count"] = st.pixel_count;
    report["datasets"].push_back(ent);
    std::printf("%s: mean R=%.4f G=%.4f B=%.4f\n", d.c_str(), st.mean[0],
                st.mean[1], st.mean[2]);
    all.emplace_back(fs::path(d).filename().string(), st);
  }
  hquic::plot_channel_distributions(
      (fs::path(out_dir) / "channel_distributions.png").string(), all);
  std::ofstream((fs::path(out_dir) / "channel_stats.json").string())
      << report.dump(2) << "\n";
  std::cout << "report: " << (fs::path(out_dir) / "channel_stats.json").string()
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hquic: learned image codec for underwater imagery"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a model (or a lambda sweep)");
  std::string tr_data, tr_ckpt = "model.hqck", tr_ckpt_dir = "sweep",
              tr_log, tr_config;
  hquic::TrainConfig tcfg;
  bool tr_sweep = false, tr_resume = false;
  train->add_option("--data", tr_data, "dataset directory")->required();
  train->add_option("--config", tr_config, "flat key=value config file");
  train->add_option("--lambda", tcfg.lambda, "rate-distortion lambda");
  train->add_option("--beta", tcfg.beta, "tone-adjustment loss weight");
  train->add_option("--lr", tcfg.learning_rate, "Adam learning rate");
  train->add_option("--batch", tcfg.batch_size, "batch size");
  train->add_option("--steps", tcfg.steps, "training steps");
  train->add_option("--seed", tcfg.seed, "RNG seed");
  train->add_option("--crop", tcfg.crop, "training crop size (multiple of 16)");
  train->add_option("--n", tcfg.n, "transform width");
  train->add_option("--m", tcfg.m, "latent channels");
  train->add_flag("--no-altc", tcfg.no_altc, "disable adaptive light correction");
  train->add_flag("--no-fbwt", tcfg.no_fbwt, "disable frequency-weighted transformer blocks");
  train->add_flag("--sweep", tr_sweep, "train one model per lambda in the default grid");
  train->add_flag("--resume", tr_resume, "resume from an existing checkpoint");
  train->add_option("--ckpt", tr_ckpt, "checkpoint output path");
  train->add_option("--ckpt-dir", tr_ckpt_dir, "sweep checkpoint directory");
  train->add_option("--log", tr_log, "metrics CSV path");

  // compress
  auto* comp = app.add_subcommand("compress", "Compress images to .hquc bitstreams");
  std::string c_ckpt, c_out;
  std::vector<std::string> c_inputs;
  bool c_no_altc = false;
  comp->add_option("--ckpt", c_ckpt, "model checkpoint")->required();
  comp->add_option("input", c_inputs, "input image(s)")->required();
  comp->add_option("-o,--out", c_out, "output path (file, or directory for many inputs)");
  comp->add_flag("--no-altc", c_no_altc, "skip light-correction side info");

  // decompress
  auto* dec = app.add_subcommand("decompress", "Decode a .hquc bitstream");
  std::string d_ckpt, d_in, d_out;
  dec->add_option("--ckpt", d_ckpt, "model checkpoint")->required();
  dec->add_option("input", d_in, "input .hquc file")->required();
  dec->add_option("-o,--out", d_out, "output image path")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Rate-distortion evaluation over a dataset");
  std::vector<std::string> e_ckpts;
  std::string e_ckpt_dir, e_data, e_anchor, e_out = "eval_out";
  int e_jobs = 1;
  ev->add_option("--ckpt", e_ckpts, "checkpoint(s) to evaluate");
  ev->add_option("--ckpt-dir", e_ckpt_dir, "directory of .hqck checkpoints");
  ev->add_option("--data", e_data, "dataset directory")->required();
  ev->add_option("--anchor", e_anchor, "anchor RD curve CSV (bpp,quality)");
  ev->add_option("--out", e_out, "report output directory");
  ev->add_option("--jobs", e_jobs, "parallel per-image workers");

  // stats
  auto* st = app.add_subcommand("stats", "Per-channel intensity statistics");
  std::vector<std::string> s_data;
  std::string s_out = "stats_out";
  st->add_option("--data", s_data, "dataset directory (repeatable)")->required();
  st->add_option("--out", s_out, "report output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) {
      if (!tr_config.empty()) {
        hquic::TrainConfig layered;
        apply_config_file(tr_config, layered);
        // re-apply flags on top of the file values
        for (const CLI::Option* o : train->get_options()) (void)o;
        // CLI11 already wrote flag values into tcfg; copy file values only for
        // options the user did not pass on the command line
        auto keep = [&](const std::string& flag, auto& dst, auto src) {
          if (train->count(flag) == 0) dst = src;
        };
        keep("--lambda", tcfg.lambda, layered.lambda);
        keep("--beta", tcfg.beta, layered.beta);
        keep("--lr", tcfg.learning_rate, layered.learning_rate);
        keep("--batch", tcfg.batch_size, layered.batch_size);
        keep("--steps", tcfg.steps, layered.steps);
        keep("--seed", tcfg.seed, layered.seed);
        keep("--crop", tcfg.crop, layered.crop);
        keep("--n", tcfg.n, layered.n);
        keep("--m", tcfg.m, layered.m);
        keep("--no-altc", tcfg.no_altc, layered.no_altc);
        keep("--no-fbwt", tcfg.no_fbwt, layered.no_fbwt);
      }
      return cmd_train(tr_data, tcfg, tr_sweep, tr_ckpt, tr_ckpt_dir, tr_log,
                       tr_resume);
    }
    if (*comp) return cmd_compress(c_ckpt, c_inputs, c_out, c_no_altc);
    if (*dec) return cmd_decompress(d_ckpt, d_in, d_out);
    if (*ev) return cmd_eval(e_ckpts, e_ckpt_dir, e_data, e_anchor, e_out, e_jobs);
    if (*st) return cmd_stats(s_data, s_out);
  } catch (const hquic::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const hquic::IncompatibleError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIncompatible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
