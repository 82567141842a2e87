#include "hquic/codec.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "hquic/errors.hpp"
#include "hquic/image.hpp"
#include "hquic/range_coder.hpp"

namespace hquic {

std::uint8_t ModelConfig::lambda_index() const {
  for (std::size_t i = 0; i < kLambdaGrid.size(); ++i)
    if (std::abs(kLambdaGrid[i] - lambda) < 1e-12)
      return static_cast<std::uint8_t>(i);
  return 255;
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << "model.n=" << n << "\n";
  os << "model.m=" << m << "\n";
  os << "altc.enabled=" << (altc_enabled ? 1 : 0) << "\n";
  os << "altc.hidden=" << altc.hidden << "\n";
  os << "altc.t_min=" << altc.t_min << "\n";
  os << "altc.side_downsample=" << altc.side_downsample << "\n";
  os << "fbwt.enabled=" << (fbwt.enabled ? 1 : 0) << "\n";
  os << "fbwt.merge_mode=" << (fbwt.merge_mode == FbwtMerge::kIdwt ? "idwt" : "concat")
     << "\n";
  os << "fbwt.window=" << fbwt.window << "\n";
  os << "fbwt.heads=" << fbwt.heads << "\n";
  os << "tone.alpha_l=" << tone.alpha_l << "\n";
  os << "tone.alpha_r=" << tone.alpha_r << "\n";
  os << "loss.lambda=" << lambda << "\n";
  os << "loss.beta=" << beta << "\n";
  os << "seed=" << seed << "\n";
  return os.str();
}

ModelConfig ModelConfig::deserialize(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("bad config line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  ModelConfig c;
  auto geti = [&](const std::string& k, int d) {
    return kv.count(k) ? std::stoi(kv[k]) : d;
  };
  auto getd = [&](const std::string& k, double d) {
    return kv.count(k) ? std::stod(kv[k]) : d;
  };
  c.n = geti("model.n", c.n);
  c.m = geti("model.m", c.m);
  c.altc_enabled = geti("altc.enabled", 1) != 0;
  c.altc.hidden = geti("altc.hidden", c.altc.hidden);
  c.altc.t_min = getd("altc.t_min", c.altc.t_min);
  c.altc.side_downsample = geti("altc.side_downsample", c.altc.side_downsample);
  c.fbwt.enabled = geti("fbwt.enabled", 1) != 0;
  if (kv.count("fbwt.merge_mode"))
    c.fbwt.merge_mode =
        kv["fbwt.merge_mode"] == "concat" ? FbwtMerge::kConcat : FbwtMerge::kIdwt;
  c.fbwt.window = geti("fbwt.window", c.fbwt.window);
  c.fbwt.heads = geti("fbwt.heads", c.fbwt.heads);
  c.tone.alpha_l = getd("tone.alpha_l", c.tone.alpha_l);
  c.tone.alpha_r = getd("tone.alpha_r", c.tone.alpha_r);
  c.lambda = getd("loss.lambda", c.lambda);
  c.beta = getd("loss.beta", c.beta);
  c.seed = static_cast<std::uint64_t>(
      std::stoull(kv.count("seed") ? kv["seed"] : "0"));
  return c;
}

Tensor quantize(const Tensor& y, QuantizeMode mode, std::uint64_t seed) {
  Tensor out(y.shape());
  if (mode == QuantizeMode::kEval) {
    for (std::size_t i = 0; i < y.numel(); ++i) {
      double r = std::round(y[i]);  // half away from zero
      r = std::clamp(r, static_cast<double>(EntropyModel::kMinSymbol),
                     static_cast<double>(EntropyModel::kMaxSymbol));
      out[i] = r;
    }
  } else {
    Tensor noise = quantize_noise(y.shape(), seed);
    for (std::size_t i = 0; i < y.numel(); ++i) out[i] = y[i] + noise[i];
  }
  return out;
}

Tensor quantize_noise(const std::vector<int>& shape, std::uint64_t seed) {
  Tensor noise(shape);
  Rng rng(seed);
  for (std::size_t i = 0; i < noise.numel(); ++i)
    noise[i] = rng.uniform() - 0.5;
  return noise;
}

namespace {

void put_u16(std::vector<std::uint8_t>& o, std::uint16_t v) {
  o.push_back(static_cast<std::uint8_t>(v & 0xFF));
  o.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& o, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) o.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& o, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) o.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}
std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

std::vector<std::uint8_t> Bitstream::serialize() const {
  std::vector<std::uint8_t> o;
  o.push_back('H');
  o.push_back('Q');
  o.push_back('U');
  o.push_back('C');
  o.push_back(version);
  o.push_back(flags);
  put_u16(o, height);
  put_u16(o, width);
  o.push_back(lambda_index);
  put_u64(o, param_hash);
  put_u32(o, static_cast<std::uint32_t>(side_info.size()));
  o.insert(o.end(), side_info.begin(), side_info.end());
  put_u32(o, static_cast<std::uint32_t>(payload.size()));
  o.insert(o.end(), payload.begin(), payload.end());
  return o;
}

Bitstream Bitstream::deserialize(const std::vector<std::uint8_t>& b) {
  if (b.size() < 26 || b[0] != 'H' || b[1] != 'Q' || b[2] != 'U' || b[3] != 'C')
    throw DecodeError("bitstream: bad magic or truncated header");
  Bitstream s;
  s.version = b[4];
  s.flags = b[5];
  s.height = get_u16(&b[6]);
  s.width = get_u16(&b[8]);
  s.lambda_index = b[10];
  s.param_hash = get_u64(&b[11]);
  std::uint32_t side_len = get_u32(&b[19]);
  std::size_t off = 23;
  if (b.size() < off + side_len + 4) throw DecodeError("bitstream: truncated side info");
  s.side_info.assign(b.begin() + static_cast<long>(off),
                     b.begin() + static_cast<long>(off + side_len));
  off += side_len;
  std::uint32_t pay_len = get_u32(&b[off]);
  off += 4;
  if (b.size() < off + pay_len) throw DecodeError("bitstream: truncated payload");
  s.payload.assign(b.begin() + static_cast<long>(off),
                   b.begin() + static_cast<long>(off + pay_len));
  return s;
}

void Bitstream::write_file(const std::string& path) const {
  auto bytes = serialize();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw NotFoundError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

Bitstream Bitstream::read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFoundError("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::size_t Bitstream::total_bytes() const { return serialize().size(); }

double Bitstream::bpp() const {
  return static_cast<double>(total_bytes()) * 8.0 /
         (static_cast<double>(height) * width);
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
  using ad::randn;
  using ad::zeros;
  int n = cfg.n, m = cfg.m;
  auto conv_init = [&](int o, int c, int k) {
    return randn({o, c, k, k}, rng, std::sqrt(2.0 / (c * k * k)));
  };
  int enc_in[4] = {3, n, n, n};
  int enc_out[4] = {n, n, n, m};
  for (int i = 0; i < 4; ++i) {
    ew_[i] = &params_.create("enc.conv" + std::to_string(i) + ".w",
                             conv_init(enc_out[i], enc_in[i], 3));
    eb_[i] = &params_.create("enc.conv" + std::to_string(i) + ".b",
                             zeros({enc_out[i]}));
  }
  int dec_in[4] = {m, n, n, n};
  int dec_out[4] = {n, n, n, 3};
  for (int i = 0; i < 4; ++i) {
    dw_[i] = &params_.create(
        "dec.deconv" + std::to_string(i) + ".w",
        randn({dec_in[i], dec_out[i], 3, 3}, rng,
              std::sqrt(2.0 / (dec_in[i] * 9))));
    db_[i] = &params_.create("dec.deconv" + std::to_string(i) + ".b",
                             zeros({dec_out[i]}));
  }
  if (cfg.fbwt.enabled) {
    for (int i = 0; i < 3; ++i)
      enc_fbwt_.push_back(std::make_unique<FbwtBlock>(
          params_, n, cfg.fbwt, rng, "fbwt.enc" + std::to_string(i)));
    for (int i = 0; i < 3; ++i)
      dec_fbwt_.push_back(std::make_unique<FbwtBlock>(
          params_, n, cfg.fbwt, rng, "fbwt.dec" + std::to_string(i)));
  }
  if (cfg.altc_enabled)
    altc_ = std::make_unique<Altc>(params_, cfg.altc, rng);
  entropy_ = std::make_unique<EntropyModel>(params_, m, rng);
}

ad::VarId Model::analysis(ad::Graph& g, ad::VarId x) {
  using namespace ad;
  const Tensor& xv = g.tape.val(x);
  if (xv.dim(2) % kStride || xv.dim(3) % kStride)
    throw ShapeError("analysis: dims must be multiples of 16, got " +
                     xv.shape_str());
  VarId h = x;
  for (int i = 0; i < 4; ++i) {
    h = conv2d(g, h, g.use(*ew_[i]), g.use(*eb_[i]), 2, 1);
    if (i < 3) {
      h = leaky_relu(g, h);
      if (cfg_.fbwt.enabled) h = enc_fbwt_[static_cast<std::size_t>(i)]->forward(g, h);
    }
  }
  return h;
}

ad::VarId Model::synthesis(ad::Graph& g, ad::VarId y) {
  using namespace ad;
  VarId h = y;
  for (int i = 0; i < 4; ++i) {
    h = deconv2d_s2(g, h, g.use(*dw_[i]), g.use(*db_[i]));
    if (i < 3) {
      h = leaky_relu(g, h);
      if (cfg_.fbwt.enabled) h = dec_fbwt_[static_cast<std::size_t>(i)]->forward(g, h);
    }
  }
  return h;
}

namespace {

Tensor to_batch1(const Tensor& chw) {
  Tensor out({1, chw.dim(0), chw.dim(1), chw.dim(2)});
  for (std::size_t i = 0; i < chw.numel(); ++i) out[i] = chw[i];
  return out;
}

Tensor from_batch1(const Tensor& nchw) {
  Tensor out({nchw.dim(1), nchw.dim(2), nchw.dim(3)});
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = nchw[i];
  return out;
}

}  // namespace

Tensor Model::analysis_t(const Tensor& x) {
  ad::Graph g;
  return from_batch1(g.tape.val(analysis(g, g.input(to_batch1(x)))));
}

Tensor Model::synthesis_t(const Tensor& y_hat) {
  ad::Graph g;
  return from_batch1(g.tape.val(synthesis(g, g.input(to_batch1(y_hat)))));
}

std::pair<Tensor, Tensor> Model::estimate_side(const Tensor& x) {
  if (!altc_) throw ConfigError("model has no ALTC estimators");
  ad::Graph g;
  ad::VarId xin = g.input(to_batch1(x));
  Tensor a4 = g.tape.val(altc_->estimate_illumination(g, xin));
  Tensor t4 = g.tape.val(altc_->estimate_transmission(g, xin));
  Tensor a({3});
  for (int c = 0; c < 3; ++c) a[c] = a4[static_cast<std::size_t>(c)];
  return {std::move(a), from_batch1(t4)};
}

std::uint64_t Model::param_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const ad::Param* p : params_.all()) {
    feed(p->name.data(), p->name.size());
    feed(p->value.data(), p->value.numel() * sizeof(double));
  }
  return h;
}

const std::vector<std::vector<std::uint32_t>>& Model::frozen_tables() {
  if (!tables_) tables_ = entropy_->freeze_cdf_tables();
  return *tables_;
}

void Model::set_frozen_tables(std::vector<std::vector<std::uint32_t>> tables) {
  tables_ = std::move(tables);
}

std::vector<std::uint8_t> encode_latents(const Tensor& y_hat, Model& model) {
  const auto& tables = model.frozen_tables();
  RangeEncoder enc;
  int c_count = y_hat.dim(0), h = y_hat.dim(1), w = y_hat.dim(2);
  for (int c = 0; c < c_count; ++c) {
    const auto& cum = tables[static_cast<std::size_t>(c)];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int s = static_cast<int>(y_hat.at3(c, y, x)) - EntropyModel::kMinSymbol;
        enc.encode(cum[static_cast<std::size_t>(s)],
                   cum[static_cast<std::size_t>(s) + 1] -
                       cum[static_cast<std::size_t>(s)]);
      }
  }
  return enc.finish();
}

Tensor decode_latents(const std::vector<std::uint8_t>& payload, Model& model,
                      int h_lat, int w_lat) {
  const auto& tables = model.frozen_tables();
  int c_count = model.config().m;
  Tensor out({c_count, h_lat, w_lat});
  RangeDecoder dec(payload);
  for (int c = 0; c < c_count; ++c) {
    const auto& cum = tables[static_cast<std::size_t>(c)];
    for (int y = 0; y < h_lat; ++y)
      for (int x = 0; x < w_lat; ++x) {
        std::uint32_t target = dec.decode_cum();
        // binary search the cumulative table
        std::size_t lo = 0, hi = cum.size() - 1;
        while (hi - lo > 1) {
          std::size_t mid = (lo + hi) / 2;
          if (cum[mid] <= target)
            lo = mid;
          else
            hi = mid;
        }
        dec.decode_update(cum[lo], cum[lo + 1] - cum[lo]);
        out.at3(c, y, x) =
            static_cast<double>(static_cast<int>(lo) + EntropyModel::kMinSymbol);
      }
  }
  return out;
}

Bitstream compress(const Tensor& image, Model& model, const CompressFlags& flags) {
  bool use_altc = model.config().altc_enabled && !flags.no_altc;
  PaddedImage padded = pad_to_multiple(image, Model::kStride);
  Bitstream bs;
  bs.height = static_cast<std::uint16_t>(padded.orig_h);
  bs.width = static_cast<std::uint16_t>(padded.orig_w);
  bs.lambda_index = model.config().lambda_index();
  bs.param_hash = model.param_hash();
  Tensor x_tilde = padded.img;
  if (use_altc) {
    auto [a, t] = model.estimate_side(padded.img);
    SideInfo si = encode_side_info(a, t, model.config().altc.side_downsample);
    bs.side_info = si.serialize();
    // closed loop: correct with the values the decoder will see
    SideInfo decoded = SideInfo::deserialize(bs.side_info);
    x_tilde = altc_correct(padded.img, decoded.dequantize_a(),
                           decoded.dequantize_t(model.config().altc.t_min),
                           model.config().altc.t_min);
    bs.flags |= 1;
  }
  Tensor y = model.analysis_t(x_tilde);
  Tensor y_hat = quantize(y, QuantizeMode::kEval);
  bs.payload = encode_latents(y_hat, model);
  return bs;
}

Tensor decompress(const Bitstream& bs, Model& model) {
  if (bs.param_hash != model.param_hash())
    throw IncompatibleError("bitstream parameter hash does not match model");
  int hp = (bs.height + Model::kStride - 1) / Model::kStride * Model::kStride;
  int wp = (bs.width + Model::kStride - 1) / Model::kStride * Model::kStride;
  Tensor y_hat =
      decode_latents(bs.payload, model, hp / Model::kStride, wp / Model::kStride);
  Tensor x_tilde_hat = model.synthesis_t(y_hat);
  Tensor x_hat = x_tilde_hat;
  if (bs.flags & 1) {
    SideInfo si = SideInfo::deserialize(bs.side_info);
    x_hat = altc_restore(x_tilde_hat, si.dequantize_a(),
                         si.dequantize_t(model.config().altc.t_min),
                         model.config().altc.t_min);
  }
  return clamp01(unpad(x_hat, bs.height, bs.width));
}

}  // namespace hquic
