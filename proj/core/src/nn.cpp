#include "hquic/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hquic::ad {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

Tensor randn(std::vector<int> shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * stddev;
  return t;
}

Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

VarId add(Graph& g, VarId a, VarId b) {
  const Tensor& av = g.tape.val(a);
  const Tensor& bv = g.tape.val(b);
  check_same_shape(av, bv, "add");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  return emit_op(g, std::move(out), [a, b](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    Tensor& ga = t.grad(a);
    Tensor& gb = t.grad(b);
    for (std::size_t i = 0; i < go.numel(); ++i) {
      ga[i] += go[i];
      gb[i] += go[i];
    }
  });
}

VarId sub(Graph& g, VarId a, VarId b) {
  const Tensor& av = g.tape.val(a);
  const Tensor& bv = g.tape.val(b);
  check_same_shape(av, bv, "sub");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  return emit_op(g, std::move(out), [a, b](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    Tensor& ga = t.grad(a);
    Tensor& gb = t.grad(b);
    for (std::size_t i = 0; i < go.numel(); ++i) {
      ga[i] += go[i];
      gb[i] -= go[i];
    }
  });
}

VarId mul(Graph& g, VarId a, VarId b) {
  const Tensor& av = g.tape.val(a);
  const Tensor& bv = g.tape.val(b);
  check_same_shape(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return emit_op(g, std::move(out), [a, b](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    Tensor& ga = t.grad(a);
    Tensor& gb = t.grad(b);
    for (std::size_t i = 0; i < go.numel(); ++i) {
      ga[i] += go[i] * bv[i];
      gb[i] += go[i] * av[i];
    }
  });
}

VarId scale(Graph& g, VarId a, double s) {
  const Tensor& av = g.tape.val(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * s;
  return emit_op(g, std::move(out), [a, s](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * s;
  });
}

VarId add_const(Graph& g, VarId a, const Tensor& c) {
  const Tensor& av = g.tape.val(a);
  check_same_shape(av, c, "add_const");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + c[i];
  return emit_op(g, std::move(out), [a](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
  });
}

VarId leaky_relu(Graph& g, VarId x, double slope) {
  const Tensor& xv = g.tape.val(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = xv[i] >= 0.0 ? xv[i] : slope * xv[i];
  return emit_op(g, std::move(out), [x, slope](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    const Tensor& xv = t.val(x);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < go.numel(); ++i)
      gx[i] += go[i] * (xv[i] >= 0.0 ? 1.0 : slope);
  });
}

VarId sigmoid(Graph& g, VarId x) {
  const Tensor& xv = g.tape.val(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  return emit_op(g, std::move(out), [x](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    const Tensor& y = t.val(id);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < go.numel(); ++i)
      gx[i] += go[i] * y[i] * (1.0 - y[i]);
  });
}

VarId sqrt_op(Graph& g, VarId x) {
  const Tensor& xv = g.tape.val(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(xv[i]);
  return emit_op(g, std::move(out), [x](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    const Tensor& y = t.val(id);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < go.numel(); ++i)
      gx[i] += go[i] * 0.5 / std::max(y[i], 1e-12);
  });
}

VarId square(Graph& g, VarId x) {
  const Tensor& xv = g.tape.val(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * xv[i];
  return emit_op(g, std::move(out), [x](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    const Tensor& xv = t.val(x);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < go.numel(); ++i) gx[i] += go[i] * 2.0 * xv[i];
  });
}

VarId log_op(Graph& g, VarId x) {
  const Tensor& xv = g.tape.val(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::log(xv[i]);
  return emit_op(g, std::move(out), [x](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    const Tensor& xv = t.val(x);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < go.numel(); ++i) gx[i] += go[i] / xv[i];
  });
}

VarId mean_all(Graph& g, VarId x) {
  const Tensor& xv = g.tape.val(x);
  double m = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) m += xv[i];
  std::size_t n = std::max<std::size_t>(xv.numel(), 1);
  Tensor out({1});
  out[0] = m / static_cast<double>(n);
  return emit_op(g, std::move(out), [x, n](Tape& t, VarId id) {
    double go = t.grad(id)[0] / static_cast<double>(n);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += go;
  });
}

VarId sum_all(Graph& g, VarId x) {
  const Tensor& xv = g.tape.val(x);
  double m = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) m += xv[i];
  Tensor out({1});
  out[0] = m;
  return emit_op(g, std::move(out), [x](Tape& t, VarId id) {
    double go = t.grad(id)[0];
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += go;
  });
}

VarId mse_scaled(Graph& g, VarId a, VarId b, double s) {
  const Tensor& av = g.tape.val(a);
  const Tensor& bv = g.tape.val(b);
  check_same_shape(av, bv, "mse_scaled");
  std::size_t n = av.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = s * (av[i] - bv[i]);
    acc += d * d;
  }
  Tensor out({1});
  out[0] = acc / static_cast<double>(n);
  return emit_op(g, std::move(out), [a, b, s, n](Tape& t, VarId id) {
    double go = t.grad(id)[0];
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    Tensor& ga = t.grad(a);
    Tensor& gb = t.grad(b);
    double k = go * 2.0 * s * s / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      double d = av[i] - bv[i];
      ga[i] += k * d;
      gb[i] -= k * d;
    }
  });
}

VarId conv2d(Graph& g, VarId x, VarId w, VarId b, int stride, int pad) {
  const Tensor& xv = g.tape.val(x);
  const Tensor& wv = g.tape.val(w);
  const Tensor& bv = g.tape.val(b);
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int O = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != C) throw std::invalid_argument("conv2d: channel mismatch");
  int Ho = (H + 2 * pad - k) / stride + 1;
  int Wo = (W + 2 * pad - k) / stride + 1;
  Tensor out({N, O, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          double acc = bv[static_cast<std::size_t>(o)];
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < k; ++ky) {
              int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < k; ++kx) {
                int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= W) continue;
                acc += xv.at4(n, c, iy, ix) *
                       wv[((static_cast<std::size_t>(o) * C + c) * k + ky) * k + kx];
              }
            }
          out.at4(n, o, oy, ox) = acc;
        }
  return emit_op(g, std::move(out),
              [x, w, b, stride, pad, N, C, H, W, O, k, Ho, Wo](Tape& t, VarId id) {
                const Tensor& go = t.grad(id);
                const Tensor& xv = t.val(x);
                const Tensor& wv = t.val(w);
                Tensor& gx = t.grad(x);
                Tensor& gw = t.grad(w);
                Tensor& gb = t.grad(b);
                for (int n = 0; n < N; ++n)
                  for (int o = 0; o < O; ++o)
                    for (int oy = 0; oy < Ho; ++oy)
                      for (int ox = 0; ox < Wo; ++ox) {
                        double gv = go.at4(n, o, oy, ox);
                        if (gv == 0.0) continue;
                        gb[static_cast<std::size_t>(o)] += gv;
                        for (int c = 0; c < C; ++c)
                          for (int ky = 0; ky < k; ++ky) {
                            int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < k; ++kx) {
                              int ix = ox * stride - pad + kx;
                              if (ix < 0 || ix >= W) continue;
                              std::size_t wi =
                                  ((static_cast<std::size_t>(o) * C + c) * k + ky) * k +
                                  kx;
                              gx.at4(n, c, iy, ix) += gv * wv[wi];
                              gw[wi] += gv * xv.at4(n, c, iy, ix);
                            }
                          }
                      }
              });
}

VarId deconv2d_s2(Graph& g, VarId x, VarId w, VarId b) {
  const Tensor& xv = g.tape.val(x);
  const Tensor& wv = g.tape.val(w);
  const Tensor& bv = g.tape.val(b);
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int O = wv.dim(1);
  const int k = 3, pad = 1;
  if (wv.dim(0) != C || wv.dim(2) != k || wv.dim(3) != k)
    throw std::invalid_argument("deconv2d_s2: bad weight shape");
  int Ho = 2 * H, Wo = 2 * W;
  Tensor out({N, O, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) out.at4(n, o, oy, ox) = bv[o];
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int iy = 0; iy < H; ++iy)
        for (int ix = 0; ix < W; ++ix) {
          double xval = xv.at4(n, c, iy, ix);
          for (int o = 0; o < O; ++o)
            for (int ky = 0; ky < k; ++ky) {
              int oy = 2 * iy - pad + ky;
              if (oy < 0 || oy >= Ho) continue;
              for (int kx = 0; kx < k; ++kx) {
                int ox = 2 * ix - pad + kx;
                if (ox < 0 || ox >= Wo) continue;
                out.at4(n, o, oy, ox) +=
                    xval * wv[((static_cast<std::size_t>(c) * O + o) * k + ky) * k + kx];
              }
            }
        }
  return emit_op(g, std::move(out),
              [x, w, b, N, C, H, W, O, Ho, Wo](Tape& t, VarId id) {
                const int k = 3, pad = 1;
                const Tensor& go = t.grad(id);
                const Tensor& xv = t.val(x);
                const Tensor& wv = t.val(w);
                Tensor& gx = t.grad(x);
                Tensor& gw = t.grad(w);
                Tensor& gb = t.grad(b);
                for (int n = 0; n < N; ++n)
                  for (int o = 0; o < O; ++o)
                    for (int oy = 0; oy < Ho; ++oy)
                      for (int ox = 0; ox < Wo; ++ox)
                        gb[o] += go.at4(n, o, oy, ox);
                for (int n = 0; n < N; ++n)
                  for (int c = 0; c < C; ++c)
                    for (int iy = 0; iy < H; ++iy)
                      for (int ix = 0; ix < W; ++ix) {
                        double xval = xv.at4(n, c, iy, ix);
                        double gacc = 0.0;
                        for (int o = 0; o < O; ++o)
                          for (int ky = 0; ky < k; ++ky) {
                            int oy = 2 * iy - pad + ky;
                            if (oy < 0 || oy >= Ho) continue;
                            for (int kx = 0; kx < k; ++kx) {
                              int ox = 2 * ix - pad + kx;
                              if (ox < 0 || ox >= Wo) continue;
                              std::size_t wi =
                                  ((static_cast<std::size_t>(c) * O + o) * k + ky) * k +
                                  kx;
                              double gv = go.at4(n, o, oy, ox);
                              gacc += gv * wv[wi];
                              gw[wi] += gv * xval;
                            }
                          }
                        gx.at4(n, c, iy, ix) += gacc;
                      }
              });
}

VarId global_avg_pool(Graph& g, VarId x) {
  const Tensor& xv = g.tape.val(x);
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({N, C});
  double inv = 1.0 / (static_cast<double>(H) * W);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) acc += xv.at4(n, c, y, xx);
      out[static_cast<std::size_t>(n) * C + c] = acc * inv;
    }
  return emit_op(g, std::move(out), [x, N, C, H, W, inv](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    Tensor& gx = t.grad(x);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        double gv = go[static_cast<std::size_t>(n) * C + c] * inv;
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx) gx.at4(n, c, y, xx) += gv;
      }
  });
}

VarId linear(Graph& g, VarId x, VarId w, VarId b) {
  const Tensor& xv = g.tape.val(x);
  const Tensor& wv = g.tape.val(w);
  const Tensor& bv = g.tape.val(b);
  int N = xv.dim(0), F = xv.dim(1), O = wv.dim(0);
  if (wv.dim(1) != F) throw std::invalid_argument("linear: feature mismatch");
  Tensor out({N, O});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) {
      double acc = bv[o];
      for (int f = 0; f < F; ++f)
        acc += xv[static_cast<std::size_t>(n) * F + f] *
               wv[static_cast<std::size_t>(o) * F + f];
      out[static_cast<std::size_t>(n) * O + o] = acc;
    }
  return emit_op(g, std::move(out), [x, w, b, N, F, O](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    Tensor& gx = t.grad(x);
    Tensor& gw = t.grad(w);
    Tensor& gb = t.grad(b);
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < O; ++o) {
        double gv = go[static_cast<std::size_t>(n) * O + o];
        gb[o] += gv;
        for (int f = 0; f < F; ++f) {
          gx[static_cast<std::size_t>(n) * F + f] +=
              gv * wv[static_cast<std::size_t>(o) * F + f];
          gw[static_cast<std::size_t>(o) * F + f] +=
              gv * xv[static_cast<std::size_t>(n) * F + f];
        }
      }
  });
}

VarId softmax_lastdim(Graph& g, VarId x) {
  const Tensor& xv = g.tape.val(x);
  int L = xv.dim(xv.ndim() - 1);
  std::size_t rows = xv.numel() / static_cast<std::size_t>(L);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * L;
    double* po = out.data() + r * L;
    double mx = in[0];
    for (int i = 1; i < L; ++i) mx = std::max(mx, in[i]);
    double s = 0.0;
    for (int i = 0; i < L; ++i) {
      po[i] = std::exp(in[i] - mx);
      s += po[i];
    }
    for (int i = 0; i < L; ++i) po[i] /= s;
  }
  return emit_op(g, std::move(out), [x, L, rows](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    const Tensor& y = t.val(id);
    Tensor& gx = t.grad(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gy = go.data() + r * L;
      const double* yy = y.data() + r * L;
      double dot = 0.0;
      for (int i = 0; i < L; ++i) dot += gy[i] * yy[i];
      for (int i = 0; i < L; ++i) gx[r * L + i] += yy[i] * (gy[i] - dot);
    }
  });
}

std::array<VarId, 4> haar_dwt(Graph& g, VarId x) {
  const Tensor& xv = g.tape.val(x);
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (H % 2 || W % 2)
    throw std::invalid_argument("haar_dwt: spatial dims must be even, got " +
                                xv.shape_str());
  int h = H / 2, w = W / 2;
  std::array<Tensor, 4> bands{Tensor({N, C, h, w}), Tensor({N, C, h, w}),
                              Tensor({N, C, h, w}), Tensor({N, C, h, w})};
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          double a = xv.at4(n, c, 2 * y, 2 * xx);
          double b = xv.at4(n, c, 2 * y, 2 * xx + 1);
          double cc = xv.at4(n, c, 2 * y + 1, 2 * xx);
          double d = xv.at4(n, c, 2 * y + 1, 2 * xx + 1);
          bands[0].at4(n, c, y, xx) = (a + b + cc + d) * 0.5;  // LL
          bands[1].at4(n, c, y, xx) = (a + b - cc - d) * 0.5;  // LH
          bands[2].at4(n, c, y, xx) = (a - b + cc - d) * 0.5;  // HL
          bands[3].at4(n, c, y, xx) = (a - b - cc + d) * 0.5;  // HH
        }
  std::array<VarId, 4> out{};
  for (int bi = 0; bi < 4; ++bi) {
    out[bi] = emit_op(g, std::move(bands[bi]),
                   [x, bi, N, C, h, w](Tape& t, VarId id) {
                     // adjoint of the orthonormal analysis: scatter band grad
                     const Tensor& go = t.grad(id);
                     Tensor& gx = t.grad(x);
                     double sy[4][4] = {{1, 1, 1, 1},
                                        {1, 1, -1, -1},
                                        {1, -1, 1, -1},
                                        {1, -1, -1, 1}};
                     for (int n = 0; n < N; ++n)
                       for (int c = 0; c < C; ++c)
                         for (int y = 0; y < h; ++y)
                           for (int xx = 0; xx < w; ++xx) {
                             double gv = go.at4(n, c, y, xx) * 0.5;
                             gx.at4(n, c, 2 * y, 2 * xx) += gv * sy[bi][0];
                             gx.at4(n, c, 2 * y, 2 * xx + 1) += gv * sy[bi][1];
                             gx.at4(n, c, 2 * y + 1, 2 * xx) += gv * sy[bi][2];
                             gx.at4(n, c, 2 * y + 1, 2 * xx + 1) += gv * sy[bi][3];
                           }
                   });
  }
  return out;
}

VarId haar_idwt(Graph& g, const std::array<VarId, 4>& bands) {
  const Tensor& ll = g.tape.val(bands[0]);
  for (int i = 1; i < 4; ++i) check_same_shape(ll, g.tape.val(bands[i]), "haar_idwt");
  int N = ll.dim(0), C = ll.dim(1), h = ll.dim(2), w = ll.dim(3);
  Tensor out({N, C, 2 * h, 2 * w});
  const Tensor& lh = g.tape.val(bands[1]);
  const Tensor& hl = g.tape.val(bands[2]);
  const Tensor& hh = g.tape.val(bands[3]);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          double L = ll.at4(n, c, y, xx);
          double Lh = lh.at4(n, c, y, xx);
          double Hl = hl.at4(n, c, y, xx);
          double Hh = hh.at4(n, c, y, xx);
          out.at4(n, c, 2 * y, 2 * xx) = (L + Lh + Hl + Hh) * 0.5;
          out.at4(n, c, 2 * y, 2 * xx + 1) = (L + Lh - Hl - Hh) * 0.5;
          out.at4(n, c, 2 * y + 1, 2 * xx) = (L - Lh + Hl - Hh) * 0.5;
          out.at4(n, c, 2 * y + 1, 2 * xx + 1) = (L - Lh - Hl + Hh) * 0.5;
        }
  std::array<VarId, 4> bs = bands;
  return emit_op(g, std::move(out), [bs, N, C, h, w](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    double sy[4][4] = {{1, 1, 1, 1},
                       {1, 1, -1, -1},
                       {1, -1, 1, -1},
                       {1, -1, -1, 1}};
    for (int bi = 0; bi < 4; ++bi) {
      Tensor& gb = t.grad(bs[bi]);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
              double acc = go.at4(n, c, 2 * y, 2 * xx) * sy[bi][0] +
                           go.at4(n, c, 2 * y, 2 * xx + 1) * sy[bi][1] +
                           go.at4(n, c, 2 * y + 1, 2 * xx) * sy[bi][2] +
                           go.at4(n, c, 2 * y + 1, 2 * xx + 1) * sy[bi][3];
              gb.at4(n, c, y, xx) += acc * 0.5;
            }
    }
  });
}

VarId pad_spatial(Graph& g, VarId x, int py, int px) {
  const Tensor& xv = g.tape.val(x);
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({N, C, H + py, W + px});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          out.at4(n, c, y, xx) = xv.at4(n, c, y, xx);
  return emit_op(g, std::move(out), [x, N, C, H, W](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    Tensor& gx = t.grad(x);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx)
            gx.at4(n, c, y, xx) += go.at4(n, c, y, xx);
  });
}

VarId crop_spatial(Graph& g, VarId x, int h, int w) {
  const Tensor& xv = g.tape.val(x);
  int N = xv.dim(0), C = xv.dim(1);
  Tensor out({N, C, h, w});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          out.at4(n, c, y, xx) = xv.at4(n, c, y, xx);
  return emit_op(g, std::move(out), [x, N, C, h, w](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    Tensor& gx = t.grad(x);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx)
            gx.at4(n, c, y, xx) += go.at4(n, c, y, xx);
  });
}

VarId concat_channels(Graph& g, const std::vector<VarId>& xs) {
  const Tensor& x0 = g.tape.val(xs[0]);
  int N = x0.dim(0), H = x0.dim(2), W = x0.dim(3);
  int Ct = 0;
  for (VarId v : xs) Ct += g.tape.val(v).dim(1);
  Tensor out({N, Ct, H, W});
  int off = 0;
  for (VarId v : xs) {
    const Tensor& xv = g.tape.val(v);
    int C = xv.dim(1);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx)
            out.at4(n, off + c, y, xx) = xv.at4(n, c, y, xx);
    off += C;
  }
  std::vector<VarId> xs_copy = xs;
  return emit_op(g, std::move(out), [xs_copy, N, H, W](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    int off = 0;
    for (VarId v : xs_copy) {
      Tensor& gx = t.grad(v);
      int C = t.val(v).dim(1);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
              gx.at4(n, c, y, xx) += go.at4(n, off + c, y, xx);
      off += C;
    }
  });
}

VarId window_partition(Graph& g, VarId x, int win) {
  const Tensor& xv = g.tape.val(x);
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (H % win || W % win)
    throw std::invalid_argument("window_partition: dims not divisible by window");
  int wy = H / win, wx = W / win;
  int B = N * wy * wx, T = win * win;
  Tensor out({B, T, C});
  for (int n = 0; n < N; ++n)
    for (int gy = 0; gy < wy; ++gy)
      for (int gx2 = 0; gx2 < wx; ++gx2) {
        int bb = (n * wy + gy) * wx + gx2;
        for (int ty = 0; ty < win; ++ty)
          for (int tx = 0; tx < win; ++tx) {
            int tt = ty * win + tx;
            for (int c = 0; c < C; ++c)
              out[(static_cast<std::size_t>(bb) * T + tt) * C + c] =
                  xv.at4(n, c, gy * win + ty, gx2 * win + tx);
          }
      }
  return emit_op(g, std::move(out), [x, win, N, C, wy, wx](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    Tensor& gx = t.grad(x);
    int T = win * win;
    for (int n = 0; n < N; ++n)
      for (int gy = 0; gy < wy; ++gy)
        for (int gx2 = 0; gx2 < wx; ++gx2) {
          int bb = (n * wy + gy) * wx + gx2;
          for (int ty = 0; ty < win; ++ty)
            for (int tx = 0; tx < win; ++tx) {
              int tt = ty * win + tx;
              for (int c = 0; c < C; ++c)
                gx.at4(n, c, gy * win + ty, gx2 * win + tx) +=
                    go[(static_cast<std::size_t>(bb) * T + tt) * C + c];
            }
        }
  });
}

VarId window_merge(Graph& g, VarId x, int win, int n_out, int c_out, int h, int w) {
  const Tensor& xv = g.tape.val(x);
  int wy = h / win, wx = w / win, T = win * win;
  if (xv.dim(0) != n_out * wy * wx || xv.dim(1) != T || xv.dim(2) != c_out)
    throw std::invalid_argument("window_merge: incompatible shapes");
  Tensor out({n_out, c_out, h, w});
  for (int n = 0; n < n_out; ++n)
    for (int gy = 0; gy < wy; ++gy)
      for (int gx2 = 0; gx2 < wx; ++gx2) {
        int bb = (n * wy + gy) * wx + gx2;
        for (int ty = 0; ty < win; ++ty)
          for (int tx = 0; tx < win; ++tx) {
            int tt = ty * win + tx;
            for (int c = 0; c < c_out; ++c)
              out.at4(n, c, gy * win + ty, gx2 * win + tx) =
                  xv[(static_cast<std::size_t>(bb) * T + tt) * c_out + c];
          }
      }
  return emit_op(g, std::move(out),
              [x, win, n_out, c_out, wy, wx](Tape& t, VarId id) {
                const Tensor& go = t.grad(id);
                Tensor& gx = t.grad(x);
                int T = win * win;
                for (int n = 0; n < n_out; ++n)
                  for (int gy = 0; gy < wy; ++gy)
                    for (int gx2 = 0; gx2 < wx; ++gx2) {
                      int bb = (n * wy + gy) * wx + gx2;
                      for (int ty = 0; ty < win; ++ty)
                        for (int tx = 0; tx < win; ++tx) {
                          int tt = ty * win + tx;
                          for (int c = 0; c < c_out; ++c)
                            gx[(static_cast<std::size_t>(bb) * T + tt) * c_out + c] +=
                                go.at4(n, c, gy * win + ty, gx2 * win + tx);
                        }
                    }
              });
}

VarId split_heads(Graph& g, VarId x, int heads) {
  const Tensor& xv = g.tape.val(x);
  int B = xv.dim(0), T = xv.dim(1), C = xv.dim(2);
  if (C % heads) throw std::invalid_argument("split_heads: C not divisible by heads");
  int D = C / heads;
  Tensor out({B * heads, T, D});
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (int t2 = 0; t2 < T; ++t2)
        for (int d = 0; d < D; ++d)
          out[((static_cast<std::size_t>(b) * heads + h) * T + t2) * D + d] =
              xv[(static_cast<std::size_t>(b) * T + t2) * C + h * D + d];
  return emit_op(g, std::move(out), [x, heads, B, T, C](Tape& t, VarId id) {
    int D = C / heads;
    const Tensor& go = t.grad(id);
    Tensor& gx = t.grad(x);
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < heads; ++h)
        for (int t2 = 0; t2 < T; ++t2)
          for (int d = 0; d < D; ++d)
            gx[(static_cast<std::size_t>(b) * T + t2) * C + h * D + d] +=
                go[((static_cast<std::size_t>(b) * heads + h) * T + t2) * D + d];
  });
}

VarId merge_heads(Graph& g, VarId x, int heads) {
  const Tensor& xv = g.tape.val(x);
  int BH = xv.dim(0), T = xv.dim(1), D = xv.dim(2);
  int B = BH / heads, C = D * heads;
  Tensor out({B, T, C});
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (int t2 = 0; t2 < T; ++t2)
        for (int d = 0; d < D; ++d)
          out[(static_cast<std::size_t>(b) * T + t2) * C + h * D + d] =
              xv[((static_cast<std::size_t>(b) * heads + h) * T + t2) * D + d];
  return emit_op(g, std::move(out), [x, heads, B, T, D](Tape& t, VarId id) {
    int C = D * heads;
    const Tensor& go = t.grad(id);
    Tensor& gx = t.grad(x);
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < heads; ++h)
        for (int t2 = 0; t2 < T; ++t2)
          for (int d = 0; d < D; ++d)
            gx[((static_cast<std::size_t>(b) * heads + h) * T + t2) * D + d] +=
                go[(static_cast<std::size_t>(b) * T + t2) * C + h * D + d];
  });
}

VarId linear_tokens(Graph& g, VarId x, VarId w, VarId b) {
  const Tensor& xv = g.tape.val(x);
  const Tensor& wv = g.tape.val(w);
  const Tensor& bv = g.tape.val(b);
  int B = xv.dim(0), T = xv.dim(1), C = xv.dim(2);
  int O = wv.dim(0);
  if (wv.dim(1) != C) throw std::invalid_argument("linear_tokens: feature mismatch");
  std::size_t rows = static_cast<std::size_t>(B) * T;
  Tensor out({B, T, O});
  for (std::size_t r = 0; r < rows; ++r)
    for (int o = 0; o < O; ++o) {
      double acc = bv[o];
      for (int c = 0; c < C; ++c)
        acc += xv[r * C + c] * wv[static_cast<std::size_t>(o) * C + c];
      out[r * O + o] = acc;
    }
  return emit_op(g, std::move(out), [x, w, b, rows, C, O](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    Tensor& gx = t.grad(x);
    Tensor& gw = t.grad(w);
    Tensor& gb = t.grad(b);
    for (std::size_t r = 0; r < rows; ++r)
      for (int o = 0; o < O; ++o) {
        double gv = go[r * O + o];
        if (gv == 0.0) continue;
        gb[o] += gv;
        for (int c = 0; c < C; ++c) {
          gx[r * C + c] += gv * wv[static_cast<std::size_t>(o) * C + c];
          gw[static_cast<std::size_t>(o) * C + c] += gv * xv[r * C + c];
        }
      }
  });
}

VarId bmm_nn(Graph& g, VarId a, VarId b) {
  const Tensor& av = g.tape.val(a);
  const Tensor& bv = g.tape.val(b);
  int B = av.dim(0), M = av.dim(1), K = av.dim(2), N = bv.dim(2);
  if (bv.dim(0) != B || bv.dim(1) != K)
    throw std::invalid_argument("bmm_nn: shape mismatch");
  Tensor out({B, M, N});
  for (int bb = 0; bb < B; ++bb)
    for (int m = 0; m < M; ++m)
      for (int n = 0; n < N; ++n) {
        double acc = 0.0;
        for (int k = 0; k < K; ++k)
          acc += av[(static_cast<std::size_t>(bb) * M + m) * K + k] *
                 bv[(static_cast<std::size_t>(bb) * K + k) * N + n];
        out[(static_cast<std::size_t>(bb) * M + m) * N + n] = acc;
      }
  return emit_op(g, std::move(out), [a, b, B, M, K, N](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    Tensor& ga = t.grad(a);
    Tensor& gb = t.grad(b);
    for (int bb = 0; bb < B; ++bb)
      for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n) {
          double gv = go[(static_cast<std::size_t>(bb) * M + m) * N + n];
          for (int k = 0; k < K; ++k) {
            ga[(static_cast<std::size_t>(bb) * M + m) * K + k] +=
                gv * bv[(static_cast<std::size_t>(bb) * K + k) * N + n];
            gb[(static_cast<std::size_t>(bb) * K + k) * N + n] +=
                gv * av[(static_cast<std::size_t>(bb) * M + m) * K + k];
          }
        }
  });
}

VarId bmm_nt(Graph& g, VarId a, VarId b) {
  const Tensor& av = g.tape.val(a);
  const Tensor& bv = g.tape.val(b);
  int B = av.dim(0), M = av.dim(1), K = av.dim(2), N = bv.dim(1);
  if (bv.dim(0) != B || bv.dim(2) != K)
    throw std::invalid_argument("bmm_nt: shape mismatch");
  Tensor out({B, M, N});
  for (int bb = 0; bb < B; ++bb)
    for (int m = 0; m < M; ++m)
      for (int n = 0; n < N; ++n) {
        double acc = 0.0;
        for (int k = 0; k < K; ++k)
          acc += av[(static_cast<std::size_t>(bb) * M + m) * K + k] *
                 bv[(static_cast<std::size_t>(bb) * N + n) * K + k];
        out[(static_cast<std::size_t>(bb) * M + m) * N + n] = acc;
      }
  return emit_op(g, std::move(out), [a, b, B, M, K, N](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    Tensor& ga = t.grad(a);
    Tensor& gb = t.grad(b);
    for (int bb = 0; bb < B; ++bb)
      for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n) {
          double gv = go[(static_cast<std::size_t>(bb) * M + m) * N + n];
          for (int k = 0; k < K; ++k) {
            ga[(static_cast<std::size_t>(bb) * M + m) * K + k] +=
                gv * bv[(static_cast<std::size_t>(bb) * N + n) * K + k];
            gb[(static_cast<std::size_t>(bb) * N + n) * K + k] +=
                gv * av[(static_cast<std::size_t>(bb) * M + m) * K + k];
          }
        }
  });
}

VarId mul_channel(Graph& g, VarId x, VarId a) {
  const Tensor& xv = g.tape.val(x);
  const Tensor& av = g.tape.val(a);
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (av.dim(0) != N || av.dim(1) != C)
    throw std::invalid_argument("mul_channel: shape mismatch");
  Tensor out(xv.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double s = av[static_cast<std::size_t>(n) * C + c];
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          out.at4(n, c, y, xx) = xv.at4(n, c, y, xx) * s;
    }
  return emit_op(g, std::move(out), [x, a, N, C, H, W](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    const Tensor& xv = t.val(x);
    const Tensor& av = t.val(a);
    Tensor& gx = t.grad(x);
    Tensor& ga = t.grad(a);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        double s = av[static_cast<std::size_t>(n) * C + c];
        double acc = 0.0;
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx) {
            double gv = go.at4(n, c, y, xx);
            gx.at4(n, c, y, xx) += gv * s;
            acc += gv * xv.at4(n, c, y, xx);
          }
        ga[static_cast<std::size_t>(n) * C + c] += acc;
      }
  });
}

VarId trimmed_mean_op(Graph& g, VarId x, double alpha_l, double alpha_r) {
  const Tensor& xv = g.tape.val(x);
  std::size_t K = xv.numel();
  if (K == 0) throw std::invalid_argument("trimmed_mean: empty input");
  std::size_t kl = static_cast<std::size_t>(alpha_l * static_cast<double>(K));
  std::size_t kr = static_cast<std::size_t>(alpha_r * static_cast<double>(K));
  if (kl + kr >= K)
    throw std::invalid_argument("trimmed_mean: no elements retained");
  std::vector<std::size_t> idx(K);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t i, std::size_t j) { return xv[i] < xv[j]; });
  std::size_t count = K - kl - kr;
  double acc = 0.0;
  for (std::size_t r = kl; r < K - kr; ++r) acc += xv[idx[r]];
  Tensor out({1});
  out[0] = acc / static_cast<double>(count);
  std::vector<std::size_t> retained(idx.begin() + static_cast<long>(kl),
                                    idx.begin() + static_cast<long>(K - kr));
  return emit_op(g, std::move(out), [x, retained, count](Tape& t, VarId id) {
    double gv = t.grad(id)[0] / static_cast<double>(count);
    Tensor& gx = t.grad(x);
    for (std::size_t i : retained) gx[i] += gv;
  });
}

VarId block_avg_op(Graph& g, VarId x, int s) {
  const Tensor& xv = g.tape.val(x);
  if (s < 1) throw std::invalid_argument("block_avg: block size must be >= 1");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out(xv.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int by = 0; by < H; by += s)
        for (int bx = 0; bx < W; bx += s) {
          int ye = std::min(by + s, H), xe = std::min(bx + s, W);
          double acc = 0.0;
          for (int y = by; y < ye; ++y)
            for (int xx = bx; xx < xe; ++xx) acc += xv.at4(n, c, y, xx);
          double m = acc / static_cast<double>((ye - by) * (xe - bx));
          for (int y = by; y < ye; ++y)
            for (int xx = bx; xx < xe; ++xx) out.at4(n, c, y, xx) = m;
        }
  return emit_op(g, std::move(out), [x, s, N, C, H, W](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    Tensor& gx = t.grad(x);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int by = 0; by < H; by += s)
          for (int bx = 0; bx < W; bx += s) {
            int ye = std::min(by + s, H), xe = std::min(bx + s, W);
            double acc = 0.0;
            for (int y = by; y < ye; ++y)
              for (int xx = bx; xx < xe; ++xx) acc += go.at4(n, c, y, xx);
            double gv = acc / static_cast<double>((ye - by) * (xe - bx));
            for (int y = by; y < ye; ++y)
              for (int xx = bx; xx < xe; ++xx) gx.at4(n, c, y, xx) += gv;
          }
  });
}

VarId altc_correct_op(Graph& g, VarId x, VarId a, VarId t_) {
  const Tensor& xv = g.tape.val(x);
  const Tensor& av = g.tape.val(a);
  const Tensor& tv = g.tape.val(t_);
  check_same_shape(xv, tv, "altc_correct");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (av.dim(0) != N || av.dim(1) != C)
    throw std::invalid_argument("altc_correct: illumination shape mismatch");
  Tensor out(xv.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double A = av[static_cast<std::size_t>(n) * C + c];
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          double tt = tv.at4(n, c, y, xx);
          out.at4(n, c, y, xx) = (xv.at4(n, c, y, xx) - A * (1.0 - tt)) / tt;
        }
    }
  return emit_op(g, std::move(out), [x, a, t_, N, C, H, W](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    const Tensor& xv = t.val(x);
    const Tensor& av = t.val(a);
    const Tensor& tv = t.val(t_);
    Tensor& gx = t.grad(x);
    Tensor& ga = t.grad(a);
    Tensor& gt = t.grad(t_);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        double A = av[static_cast<std::size_t>(n) * C + c];
        double gacc = 0.0;
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx) {
            double gv = go.at4(n, c, y, xx);
            double tt = tv.at4(n, c, y, xx);
            gx.at4(n, c, y, xx) += gv / tt;
            gacc += gv * (tt - 1.0) / tt;
            // d/dt[(x-A)/t + A] = -(x-A)/t^2
            gt.at4(n, c, y, xx) += -gv * (xv.at4(n, c, y, xx) - A) / (tt * tt);
          }
        ga[static_cast<std::size_t>(n) * C + c] += gacc;
      }
  });
}

VarId altc_restore_op(Graph& g, VarId x, VarId a, VarId t_) {
  const Tensor& xv = g.tape.val(x);
  const Tensor& av = g.tape.val(a);
  const Tensor& tv = g.tape.val(t_);
  check_same_shape(xv, tv, "altc_restore");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (av.dim(0) != N || av.dim(1) != C)
    throw std::invalid_argument("altc_restore: illumination shape mismatch");
  Tensor out(xv.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double A = av[static_cast<std::size_t>(n) * C + c];
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          double tt = tv.at4(n, c, y, xx);
          out.at4(n, c, y, xx) = A * (1.0 - tt) + xv.at4(n, c, y, xx) * tt;
        }
    }
  return emit_op(g, std::move(out), [x, a, t_, N, C, H, W](Tape& t, VarId id) {
    const Tensor& go = t.grad(id);
    const Tensor& xv = t.val(x);
    const Tensor& av = t.val(a);
    const Tensor& tv = t.val(t_);
    Tensor& gx = t.grad(x);
    Tensor& ga = t.grad(a);
    Tensor& gt = t.grad(t_);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        double A = av[static_cast<std::size_t>(n) * C + c];
        double gacc = 0.0;
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx) {
            double gv = go.at4(n, c, y, xx);
            double tt = tv.at4(n, c, y, xx);
            gx.at4(n, c, y, xx) += gv * tt;
            gacc += gv * (1.0 - tt);
            gt.at4(n, c, y, xx) += gv * (xv.at4(n, c, y, xx) - A);
          }
        ga[static_cast<std::size_t>(n) * C + c] += gacc;
      }
  });
}

}  // namespace hquic::ad
