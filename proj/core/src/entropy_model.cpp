#include "hquic/entropy_model.hpp"

#include <algorithm>
#include <cmath>

namespace hquic {

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double softplus_inv(double y) { return std::log(std::expm1(y)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr int H = EntropyModel::kHidden;

// intermediates of one scalar CDF evaluation
struct CdfEval {
  double l1[H], y1[H], l2[H], y2[H], z, c;
};

// channel parameter views
struct ChanParams {
  const double *h1, *b1, *a1, *h2, *b2, *a2, *h3;
  double b3;
};

CdfEval cdf_forward(const ChanParams& p, double u) {
  CdfEval e;
  for (int j = 0; j < H; ++j) {
    e.l1[j] = softplus(p.h1[j]) * u + p.b1[j];
    e.y1[j] = e.l1[j] + std::tanh(p.a1[j]) * std::tanh(e.l1[j]);
  }
  for (int j = 0; j < H; ++j) {
    double acc = p.b2[j];
    for (int k = 0; k < H; ++k) acc += softplus(p.h2[j * H + k]) * e.y1[k];
    e.l2[j] = acc;
    e.y2[j] = acc + std::tanh(p.a2[j]) * std::tanh(acc);
  }
  double z = p.b3;
  for (int j = 0; j < H; ++j) z += softplus(p.h3[j]) * e.y2[j];
  e.z = z;
  e.c = sigmoid(z);
  return e;
}

struct ChanGrads {
  double *h1, *b1, *a1, *h2, *b2, *a2, *h3, *b3;
};

// reverse pass; returns d(output)/du contribution scaled by go
double cdf_backward(const ChanParams& p, const CdfEval& e, double u, double go,
                    const ChanGrads& gr) {
  double dz = go * e.c * (1.0 - e.c);
  *gr.b3 += dz;
  double dy2[H];
  for (int j = 0; j < H; ++j) {
    gr.h3[j] += dz * e.y2[j] * sigmoid(p.h3[j]);
    dy2[j] = dz * softplus(p.h3[j]);
  }
  double dy1[H] = {0, 0, 0};
  for (int j = 0; j < H; ++j) {
    double th = std::tanh(e.l2[j]);
    double ta = std::tanh(p.a2[j]);
    double dl2 = dy2[j] * (1.0 + ta * (1.0 - th * th));
    gr.a2[j] += dy2[j] * th * (1.0 - ta * ta);
    gr.b2[j] += dl2;
    for (int k = 0; k < H; ++k) {
      gr.h2[j * H + k] += dl2 * e.y1[k] * sigmoid(p.h2[j * H + k]);
      dy1[k] += dl2 * softplus(p.h2[j * H + k]);
    }
  }
  double du = 0.0;
  for (int j = 0; j < H; ++j) {
    double th = std::tanh(e.l1[j]);
    double ta = std::tanh(p.a1[j]);
    double dl1 = dy1[j] * (1.0 + ta * (1.0 - th * th));
    gr.a1[j] += dy1[j] * th * (1.0 - ta * ta);
    gr.b1[j] += dl1;
    gr.h1[j] += dl1 * u * sigmoid(p.h1[j]);
    du += dl1 * softplus(p.h1[j]);
  }
  return du;
}

}  // namespace

EntropyModel::EntropyModel(ad::ParamStore& ps, int channels, Rng& rng,
                           const std::string& prefix)
    : channels_(channels) {
  Tensor h1({channels, H}), b1({channels, H}), a1({channels, H});
  Tensor h2({channels, H * H}), b2({channels, H}), a2({channels, H});
  Tensor h3({channels, H}), b3({channels});
  // wide initial CDF (logistic scale ~10) so the whole symbol support starts
  // above the 16-bit table resolution; training sharpens it per channel
  double i1 = softplus_inv(0.1);
  double i2 = softplus_inv(1.0 / H);
  for (int c = 0; c < channels; ++c) {
    for (int j = 0; j < H; ++j) {
      h1[static_cast<std::size_t>(c) * H + j] = i1;
      b1[static_cast<std::size_t>(c) * H + j] = rng.uniform(-0.5, 0.5);
      h3[static_cast<std::size_t>(c) * H + j] = i2;
      b2[static_cast<std::size_t>(c) * H + j] = rng.uniform(-0.5, 0.5);
      for (int k = 0; k < H; ++k)
        h2[(static_cast<std::size_t>(c) * H + j) * H + k] = i2;
    }
  }
  h1_ = &ps.create(prefix + ".h1", std::move(h1));
  b1_ = &ps.create(prefix + ".b1", std::move(b1));
  a1_ = &ps.create(prefix + ".a1", std::move(a1));
  h2_ = &ps.create(prefix + ".h2", std::move(h2));
  b2_ = &ps.create(prefix + ".b2", std::move(b2));
  a2_ = &ps.create(prefix + ".a2", std::move(a2));
  h3_ = &ps.create(prefix + ".h3", std::move(h3));
  b3_ = &ps.create(prefix + ".b3", std::move(b3));
}

double EntropyModel::cdf(int channel, double u) const {
  std::size_t c = static_cast<std::size_t>(channel);
  ChanParams p{h1_->value.data() + c * H, b1_->value.data() + c * H,
               a1_->value.data() + c * H, h2_->value.data() + c * H * H,
               b2_->value.data() + c * H, a2_->value.data() + c * H,
               h3_->value.data() + c * H, b3_->value[c]};
  return cdf_forward(p, u).c;
}

double EntropyModel::likelihood_scalar(int channel, double u) const {
  return std::max(cdf(channel, u + 0.5) - cdf(channel, u - 0.5),
                  kLikelihoodFloor);
}

ad::VarId EntropyModel::likelihood(ad::Graph& g, ad::VarId y_hat) {
  using ad::VarId;
  VarId vh1 = g.use(*h1_), vb1 = g.use(*b1_), va1 = g.use(*a1_);
  VarId vh2 = g.use(*h2_), vb2 = g.use(*b2_), va2 = g.use(*a2_);
  VarId vh3 = g.use(*h3_), vb3 = g.use(*b3_);
  // fetch after the uses above: pushing nodes may reallocate the tape
  const Tensor& yv = g.tape.val(y_hat);
  int N = yv.dim(0), C = yv.dim(1);
  std::size_t plane = yv.numel() / (static_cast<std::size_t>(N) * C);
  Tensor out(yv.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      std::size_t cc = static_cast<std::size_t>(c);
      ChanParams p{g.tape.val(vh1).data() + cc * H,
                   g.tape.val(vb1).data() + cc * H,
                   g.tape.val(va1).data() + cc * H,
                   g.tape.val(vh2).data() + cc * H * H,
                   g.tape.val(vb2).data() + cc * H,
                   g.tape.val(va2).data() + cc * H,
                   g.tape.val(vh3).data() + cc * H,
                   g.tape.val(vb3)[cc]};
      std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        double u = yv[base + i];
        out[base + i] = std::max(
            cdf_forward(p, u + 0.5).c - cdf_forward(p, u - 0.5).c,
            kLikelihoodFloor);
      }
    }
  int CC = C;
  return ad::emit_op(
      g, std::move(out),
      [y_hat, vh1, vb1, va1, vh2, vb2, va2, vh3, vb3, N, CC,
       plane](ad::Tape& t, ad::VarId id) {
        const Tensor& go = t.grad(id);
        const Tensor& pv = t.val(id);
        const Tensor& yv = t.val(y_hat);
        Tensor& gy = t.grad(y_hat);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < CC; ++c) {
            std::size_t cc = static_cast<std::size_t>(c);
            ChanParams p{t.val(vh1).data() + cc * H, t.val(vb1).data() + cc * H,
                         t.val(va1).data() + cc * H,
                         t.val(vh2).data() + cc * H * H,
                         t.val(vb2).data() + cc * H, t.val(va2).data() + cc * H,
                         t.val(vh3).data() + cc * H, t.val(vb3)[cc]};
            ChanGrads gr{t.grad(vh1).data() + cc * H,
                         t.grad(vb1).data() + cc * H,
                         t.grad(va1).data() + cc * H,
                         t.grad(vh2).data() + cc * H * H,
                         t.grad(vb2).data() + cc * H,
                         t.grad(va2).data() + cc * H,
                         t.grad(vh3).data() + cc * H,
                         t.grad(vb3).data() + cc};
            std::size_t base = (static_cast<std::size_t>(n) * CC + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              double gval = go[base + i];
              if (gval == 0.0) continue;
              // no gradient through the likelihood floor
              if (pv[base + i] <= EntropyModel::kLikelihoodFloor) continue;
              double u = yv[base + i];
              CdfEval ep = cdf_forward(p, u + 0.5);
              CdfEval em = cdf_forward(p, u - 0.5);
              double du = cdf_backward(p, ep, u + 0.5, gval, gr) +
                          cdf_backward(p, em, u - 0.5, -gval, gr);
              gy[base + i] += du;
            }
          }
      });
}

std::vector<std::vector<std::uint32_t>> EntropyModel::freeze_cdf_tables() const {
  std::vector<std::vector<std::uint32_t>> tables(
      static_cast<std::size_t>(channels_));
  for (int c = 0; c < channels_; ++c) {
    std::vector<double> pmf(kNumSymbols);
    for (int s = kMinSymbol; s <= kMaxSymbol; ++s)
      pmf[static_cast<std::size_t>(s - kMinSymbol)] =
          std::max(cdf(c, s + 0.5) - cdf(c, s - 0.5), 1e-12);
    // fold tail mass into the edge symbols
    pmf.front() += std::max(cdf(c, kMinSymbol - 0.5), 0.0);
    pmf.back() += std::max(1.0 - cdf(c, kMaxSymbol + 0.5), 0.0);
    double total = 0.0;
    for (double v : pmf) total += v;
    // quantize to 16-bit total with every symbol >= 1
    const std::uint32_t kTotal = 1u << 16;
    std::vector<std::uint32_t> freq(pmf.size());
    std::uint32_t sum = 0;
    for (std::size_t i = 0; i < pmf.size(); ++i) {
      freq[i] = std::max<std::uint32_t>(
          1, static_cast<std::uint32_t>(std::lround(pmf[i] / total * kTotal)));
      sum += freq[i];
    }
    // settle the rounding remainder on the most probable symbol
    std::size_t arg = 0;
    for (std::size_t i = 1; i < freq.size(); ++i)
      if (freq[i] > freq[arg]) arg = i;
    std::int64_t diff =
        static_cast<std::int64_t>(kTotal) - static_cast<std::int64_t>(sum);
    freq[arg] = static_cast<std::uint32_t>(
        static_cast<std::int64_t>(freq[arg]) + diff);
    std::vector<std::uint32_t> cum(pmf.size() + 1, 0);
    for (std::size_t i = 0; i < freq.size(); ++i) cum[i + 1] = cum[i] + freq[i];
    tables[static_cast<std::size_t>(c)] = std::move(cum);
  }
  return tables;
}

double estimate_rate_bpp(const Tensor& likelihoods, std::size_t num_pixels) {
  double bits = 0.0;
  for (std::size_t i = 0; i < likelihoods.numel(); ++i)
    bits -= std::log2(std::max(likelihoods[i], EntropyModel::kLikelihoodFloor));
  return bits / static_cast<double>(num_pixels);
}

ad::VarId estimate_rate_bpp_op(ad::Graph& g, ad::VarId likelihoods,
                               std::size_t num_pixels) {
  using namespace ad;
  VarId lg = log_op(g, likelihoods);
  return scale(g, sum_all(g, lg),
               -1.0 / (std::log(2.0) * static_cast<double>(num_pixels)));
}

}  // namespace hquic
