#include "hquic/fbwt.hpp"

#include <cmath>

#include "hquic/errors.hpp"

namespace hquic {

namespace {

// out(n,c,h,w) = x(n,c,h,w) * k * gates(n, band)
ad::VarId scale_by_gate(ad::Graph& g, ad::VarId x, ad::VarId gates, int band,
                        double k) {
  const Tensor& xv = g.tape.val(x);
  const Tensor& gv = g.tape.val(gates);
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out(xv.shape());
  for (int n = 0; n < N; ++n) {
    double s = k * gv[static_cast<std::size_t>(n) * 4 + band];
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          out.at4(n, c, y, xx) = xv.at4(n, c, y, xx) * s;
  }
  return ad::emit_op(
      g, std::move(out), [x, gates, band, k, N, C, H, W](ad::Tape& t, ad::VarId id) {
        const Tensor& go = t.grad(id);
        const Tensor& xv = t.val(x);
        const Tensor& gv = t.val(gates);
        Tensor& gx = t.grad(x);
        Tensor& gg = t.grad(gates);
        for (int n = 0; n < N; ++n) {
          double s = k * gv[static_cast<std::size_t>(n) * 4 + band];
          double acc = 0.0;
          for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
              for (int xx = 0; xx < W; ++xx) {
                double gvv = go.at4(n, c, y, xx);
                gx.at4(n, c, y, xx) += gvv * s;
                acc += gvv * xv.at4(n, c, y, xx);
              }
          gg[static_cast<std::size_t>(n) * 4 + band] += acc * k;
        }
      });
}

// depth-to-space, factor 2: (N,4C,h,w) -> (N,C,2h,2w); channel group b of 4
// lands at spatial offset (b/2, b%2)
ad::VarId depth_to_space2(ad::Graph& g, ad::VarId x) {
  const Tensor& xv = g.tape.val(x);
  int N = xv.dim(0), C4 = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int C = C4 / 4;
  Tensor out({N, C, 2 * H, 2 * W});
  for (int n = 0; n < N; ++n)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx)
            out.at4(n, c, 2 * y + b / 2, 2 * xx + b % 2) =
                xv.at4(n, b * C + c, y, xx);
  return ad::emit_op(g, std::move(out), [x, N, C, H, W](ad::Tape& t, ad::VarId id) {
    const Tensor& go = t.grad(id);
    Tensor& gx = t.grad(x);
    for (int n = 0; n < N; ++n)
      for (int b = 0; b < 4; ++b)
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
              gx.at4(n, b * C + c, y, xx) +=
                  go.at4(n, c, 2 * y + b / 2, 2 * xx + b % 2);
  });
}

}  // namespace

FbwtBlock::FbwtBlock(ad::ParamStore& ps, int channels, const FbwtConfig& cfg,
                     Rng& rng, const std::string& prefix)
    : channels_(channels), cfg_(cfg) {
  using ad::randn;
  using ad::zeros;
  int c = channels;
  if (c % cfg.heads)
    throw ConfigError("fbwt: channels must be divisible by heads");
  // zero-init gate => equal weights at start
  gate_w_ = &ps.create(prefix + ".gate.w", zeros({4, c}));
  gate_b_ = &ps.create(prefix + ".gate.b", zeros({4}));
  const char* band_names[4] = {"ll", "lh", "hl", "hh"};
  double s = std::sqrt(1.0 / c);
  for (int e = 0; e < 4; ++e) {
    std::string p = prefix + ".expert_" + band_names[e];
    experts_[e].wq = &ps.create(p + ".wq", randn({c, c}, rng, s));
    experts_[e].wk = &ps.create(p + ".wk", randn({c, c}, rng, s));
    experts_[e].wv = &ps.create(p + ".wv", randn({c, c}, rng, s));
    // zero-init output projections => the block starts as an identity branch
    experts_[e].wo = &ps.create(p + ".wo", zeros({c, c}));
    experts_[e].ff_w1 = &ps.create(p + ".ff.w1", randn({2 * c, c}, rng, s));
    experts_[e].ff_b1 = &ps.create(p + ".ff.b1", zeros({2 * c}));
    experts_[e].ff_w2 = &ps.create(p + ".ff.w2", zeros({c, 2 * c}));
    experts_[e].ff_b2 = &ps.create(p + ".ff.b2", zeros({c}));
  }
  if (cfg.merge_mode == FbwtMerge::kConcat) {
    concat_proj_w_ = &ps.create(prefix + ".concat.w",
                                randn({4 * c, 4 * c, 1, 1}, rng, std::sqrt(1.0 / (4 * c))));
    concat_proj_b_ = &ps.create(prefix + ".concat.b", zeros({4 * c}));
  }
}

ad::VarId FbwtBlock::gate_weights(ad::Graph& g, ad::VarId f) {
  using namespace ad;
  VarId p = global_avg_pool(g, f);
  return softmax_lastdim(g, linear(g, p, g.use(*gate_w_), g.use(*gate_b_)));
}

ad::VarId FbwtBlock::expert_attention(ad::Graph& g, ad::VarId band,
                                      int band_index) {
  using namespace ad;
  const Expert& e = experts_[static_cast<std::size_t>(band_index)];
  const Tensor& bv = g.tape.val(band);
  int N = bv.dim(0), C = bv.dim(1), H = bv.dim(2), W = bv.dim(3);
  int win = cfg_.window, heads = cfg_.heads;
  int hp = (H + win - 1) / win * win, wp = (W + win - 1) / win * win;
  VarId x = band;
  if (hp != H || wp != W) x = pad_spatial(g, x, hp - H, wp - W);
  VarId tokens = window_partition(g, x, win);
  VarId q = split_heads(g, linear_tokens(g, tokens, g.use(*e.wq),
                                         g.input(Tensor({C}))),
                        heads);
  VarId k = split_heads(g, linear_tokens(g, tokens, g.use(*e.wk),
                                         g.input(Tensor({C}))),
                        heads);
  VarId v = split_heads(g, linear_tokens(g, tokens, g.use(*e.wv),
                                         g.input(Tensor({C}))),
                        heads);
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(C / heads));
  VarId attn = softmax_lastdim(g, scale(g, bmm_nt(g, q, k), inv_sqrt_d));
  VarId ctx = merge_heads(g, bmm_nn(g, attn, v), heads);
  VarId proj = linear_tokens(g, ctx, g.use(*e.wo), g.input(Tensor({C})));
  VarId res1 = add(g, tokens, proj);
  VarId ff = linear_tokens(
      g, leaky_relu(g, linear_tokens(g, res1, g.use(*e.ff_w1), g.use(*e.ff_b1))),
      g.use(*e.ff_w2), g.use(*e.ff_b2));
  VarId res2 = add(g, res1, ff);
  VarId merged = window_merge(g, res2, win, N, C, hp, wp);
  if (hp != H || wp != W) merged = crop_spatial(g, merged, H, W);
  return merged;
}

ad::VarId FbwtBlock::forward(ad::Graph& g, ad::VarId f) {
  using namespace ad;
  VarId gates = gate_weights(g, f);
  std::array<VarId, 4> bands = haar_dwt(g, f);
  std::array<VarId, 4> weighted{};
  for (int b = 0; b < 4; ++b)
    weighted[b] =
        scale_by_gate(g, expert_attention(g, bands[b], b), gates, b, 4.0);
  VarId v;
  if (cfg_.merge_mode == FbwtMerge::kIdwt) {
    v = haar_idwt(g, weighted);
  } else {
    VarId cat = concat_channels(
        g, {weighted[0], weighted[1], weighted[2], weighted[3]});
    VarId proj =
        conv2d(g, cat, g.use(*concat_proj_w_), g.use(*concat_proj_b_), 1, 0);
    v = depth_to_space2(g, proj);
  }
  return add(g, f, v);
}

}  // namespace hquic
