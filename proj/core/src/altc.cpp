#include "hquic/altc.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "hquic/errors.hpp"

namespace hquic {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> SideInfo::serialize() const {
  std::vector<std::uint8_t> out;
  out.push_back(s);
  put_u16(out, height);
  put_u16(out, width);
  for (int c = 0; c < 3; ++c) put_u16(out, a_q[c]);
  uLongf bound = compressBound(static_cast<uLong>(t_q.size()));
  std::vector<std::uint8_t> z(bound);
  if (compress2(z.data(), &bound, t_q.data(), static_cast<uLong>(t_q.size()),
                Z_BEST_COMPRESSION) != Z_OK)
    throw std::runtime_error("side info: zlib compression failed");
  put_u32(out, static_cast<std::uint32_t>(bound));
  out.insert(out.end(), z.begin(), z.begin() + static_cast<long>(bound));
  return out;
}

SideInfo SideInfo::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 15) throw DecodeError("side info: truncated header");
  SideInfo si;
  si.s = bytes[0];
  si.height = get_u16(&bytes[1]);
  si.width = get_u16(&bytes[3]);
  for (int c = 0; c < 3; ++c) si.a_q[c] = get_u16(&bytes[5 + 2 * c]);
  std::uint32_t zlen = get_u32(&bytes[11]);
  if (bytes.size() < 15 + static_cast<std::size_t>(zlen))
    throw DecodeError("side info: truncated payload");
  if (si.s == 0 || si.height % si.s || si.width % si.s)
    throw DecodeError("side info: invalid downsample factor");
  std::size_t raw =
      3ull * (si.height / si.s) * (si.width / si.s);
  si.t_q.assign(raw, 0);
  uLongf rawlen = static_cast<uLongf>(raw);
  int rc = uncompress(si.t_q.data(), &rawlen, &bytes[15], zlen);
  if (rc != Z_OK || rawlen != raw)
    throw DecodeError("side info: corrupt compressed map");
  return si;
}

Tensor SideInfo::dequantize_a() const {
  Tensor a({3});
  for (int c = 0; c < 3; ++c) a[c] = a_q[c] / 65535.0;
  return a;
}

Tensor SideInfo::dequantize_t(double t_min) const {
  int hs = height / s, ws = width / s;
  Tensor t({3, height, width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        int sy = std::min(y / s, hs - 1);
        int sx = std::min(x / s, ws - 1);
        double v = t_q[(static_cast<std::size_t>(c) * hs + sy) * ws + sx] / 255.0;
        t.at3(c, y, x) = std::max(v, t_min);
      }
  return t;
}

SideInfo encode_side_info(const Tensor& a, const Tensor& t, int s) {
  int h = t.dim(1), w = t.dim(2);
  if (s < 1 || h % s || w % s)
    throw ShapeError("encode_side_info: downsample factor must divide dims");
  SideInfo si;
  si.s = static_cast<std::uint8_t>(s);
  si.height = static_cast<std::uint16_t>(h);
  si.width = static_cast<std::uint16_t>(w);
  for (int c = 0; c < 3; ++c)
    si.a_q[c] = static_cast<std::uint16_t>(
        std::lround(std::clamp(a[c], 0.0, 1.0) * 65535.0));
  int hs = h / s, ws = w / s;
  si.t_q.assign(3ull * hs * ws, 0);
  double inv = 1.0 / (static_cast<double>(s) * s);
  for (int c = 0; c < 3; ++c)
    for (int sy = 0; sy < hs; ++sy)
      for (int sx = 0; sx < ws; ++sx) {
        double acc = 0.0;
        for (int y = sy * s; y < (sy + 1) * s; ++y)
          for (int x = sx * s; x < (sx + 1) * s; ++x) acc += t.at3(c, y, x);
        double v = std::clamp(acc * inv, 0.0, 1.0);
        si.t_q[(static_cast<std::size_t>(c) * hs + sy) * ws + sx] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return si;
}

Tensor altc_correct(const Tensor& x, const Tensor& a, const Tensor& t,
                    double t_min) {
  if (!x.same_shape(t))
    throw ShapeError("altc_correct: x/t shape mismatch");
  Tensor out(x.shape());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < x.dim(1); ++y)
      for (int xx = 0; xx < x.dim(2); ++xx) {
        double tv = t.at3(c, y, xx);
        if (tv < t_min - 1e-12)
          throw DomainError("altc_correct: transmission below t_min");
        out.at3(c, y, xx) = (x.at3(c, y, xx) - a[c] * (1.0 - tv)) / tv;
      }
  return out;
}

Tensor altc_restore(const Tensor& x_tilde_hat, const Tensor& a, const Tensor& t,
                    double t_min) {
  if (!x_tilde_hat.same_shape(t))
    throw ShapeError("altc_restore: shape mismatch");
  Tensor out(x_tilde_hat.shape());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < t.dim(1); ++y)
      for (int xx = 0; xx < t.dim(2); ++xx) {
        double tv = t.at3(c, y, xx);
        if (tv < t_min - 1e-12)
          throw DomainError("altc_restore: transmission below t_min");
        out.at3(c, y, xx) = a[c] * (1.0 - tv) + x_tilde_hat.at3(c, y, xx) * tv;
      }
  return out;
}

Altc::Altc(ad::ParamStore& ps, const AltcConfig& cfg, Rng& rng,
           const std::string& prefix)
    : cfg_(cfg) {
  using ad::randn;
  using ad::zeros;
  int h = cfg.hidden;
  auto w_init = [&](int o, int c, int k) {
    return randn({o, c, k, k}, rng, std::sqrt(2.0 / (c * k * k)));
  };
  ea_w1_ = &ps.create(prefix + ".ea.conv1.w", w_init(h, 3, 3));
  ea_b1_ = &ps.create(prefix + ".ea.conv1.b", zeros({h}));
  ea_w2_ = &ps.create(prefix + ".ea.conv2.w", w_init(h, h, 3));
  ea_b2_ = &ps.create(prefix + ".ea.conv2.b", zeros({h}));
  ea_w3_ = &ps.create(prefix + ".ea.conv3.w", w_init(h, h, 3));
  ea_b3_ = &ps.create(prefix + ".ea.conv3.b", zeros({h}));
  ea_fc_w_ = &ps.create(prefix + ".ea.fc.w", randn({3, h}, rng, std::sqrt(1.0 / h)));
  ea_fc_b_ = &ps.create(prefix + ".ea.fc.b", zeros({3}));
  et_w1_ = &ps.create(prefix + ".et.conv1.w", w_init(h, 3, 3));
  et_b1_ = &ps.create(prefix + ".et.conv1.b", zeros({h}));
  et_w2_ = &ps.create(prefix + ".et.conv2.w", w_init(h, h, 3));
  et_b2_ = &ps.create(prefix + ".et.conv2.b", zeros({h}));
  et_w3_ = &ps.create(prefix + ".et.conv3.w", w_init(h, h, 3));
  et_b3_ = &ps.create(prefix + ".et.conv3.b", zeros({h}));
  et_w4_ = &ps.create(prefix + ".et.conv4.w", w_init(3, h, 3));
  et_b4_ = &ps.create(prefix + ".et.conv4.b", zeros({3}));
}

ad::VarId Altc::estimate_illumination(ad::Graph& g, ad::VarId x) {
  using namespace ad;
  VarId h1 = leaky_relu(g, conv2d(g, x, g.use(*ea_w1_), g.use(*ea_b1_), 2, 1));
  VarId h2 = leaky_relu(g, conv2d(g, h1, g.use(*ea_w2_), g.use(*ea_b2_), 2, 1));
  VarId h3 = leaky_relu(g, conv2d(g, h2, g.use(*ea_w3_), g.use(*ea_b3_), 2, 1));
  VarId p = global_avg_pool(g, h3);
  return sigmoid(g, linear(g, p, g.use(*ea_fc_w_), g.use(*ea_fc_b_)));
}

ad::VarId Altc::estimate_transmission(ad::Graph& g, ad::VarId x) {
  using namespace ad;
  VarId h1 = leaky_relu(g, conv2d(g, x, g.use(*et_w1_), g.use(*et_b1_), 1, 1));
  VarId h2 = leaky_relu(g, conv2d(g, h1, g.use(*et_w2_), g.use(*et_b2_), 1, 1));
  VarId h3 = leaky_relu(g, conv2d(g, h2, g.use(*et_w3_), g.use(*et_b3_), 1, 1));
  VarId s = sigmoid(g, conv2d(g, h3, g.use(*et_w4_), g.use(*et_b4_), 1, 1));
  // affine map of the sigmoid onto [t_min, 1]
  double tm = cfg_.t_min;
  VarId scaled = scale(g, s, 1.0 - tm);
  Tensor floor_t(g.tape.val(scaled).shape());
  floor_t.fill(tm);
  return add_const(g, scaled, floor_t);
}

}  // namespace hquic
