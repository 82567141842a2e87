#include "hquic/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <mutex>
#include <thread>

#include "hquic/errors.hpp"
#include "hquic/image.hpp"

namespace hquic {

double psnr(const Tensor& x, const Tensor& y) {
  if (!x.same_shape(y)) throw ShapeError("psnr: shape mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double a = std::lround(std::clamp(x[i], 0.0, 1.0) * 255.0);
    double b = std::lround(std::clamp(y[i], 0.0, 1.0) * 255.0);
    mse += (a - b) * (a - b);
  }
  mse /= static_cast<double>(x.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

namespace {

constexpr int kWin = 11;
const std::array<double, 5> kMsSsimWeights = {0.0448, 0.2856, 0.3001, 0.2363,
                                              0.1333};

std::array<double, kWin> gaussian_kernel() {
  std::array<double, kWin> k{};
  double sigma = 1.5, sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    double d = i - (kWin - 1) / 2.0;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// separable valid-region Gaussian filter on (H,W)
std::vector<double> gauss_filter(const std::vector<double>& img, int h, int w,
                                 int& oh, int& ow) {
  static const auto k = gaussian_kernel();
  oh = h - kWin + 1;
  ow = w - kWin + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWin; ++i)
        acc += img[static_cast<std::size_t>(y) * w + x + i] *
               k[static_cast<std::size_t>(i)];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWin; ++i)
        acc += tmp[static_cast<std::size_t>(y + i) * ow + x] *
               k[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

// mean luminance-similarity and contrast-structure terms of one channel pair
void ssim_terms(const std::vector<double>& a, const std::vector<double>& b,
                int h, int w, double& l_mean, double& cs_mean) {
  const double c1 = 6.5025, c2 = 58.5225;  // (0.01*255)^2, (0.03*255)^2
  int oh, ow;
  auto mu_a = gauss_filter(a, h, w, oh, ow);
  auto mu_b = gauss_filter(b, h, w, oh, ow);
  std::vector<double> aa(a.size()), bb(b.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  auto s_aa = gauss_filter(aa, h, w, oh, ow);
  auto s_bb = gauss_filter(bb, h, w, oh, ow);
  auto s_ab = gauss_filter(ab, h, w, oh, ow);
  double lsum = 0.0, cssum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    double ma = mu_a[i], mb = mu_b[i];
    double va = s_aa[i] - ma * ma;
    double vb = s_bb[i] - mb * mb;
    double cov = s_ab[i] - ma * mb;
    lsum += (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    cssum += (2 * cov + c2) / (va + vb + c2);
  }
  l_mean = lsum / static_cast<double>(mu_a.size());
  cs_mean = cssum / static_cast<double>(mu_a.size());
}

std::vector<double> downsample2(const std::vector<double>& img, int h, int w,
                                int& oh, int& ow) {
  oh = h / 2;
  ow = w / 2;
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      out[static_cast<std::size_t>(y) * ow + x] =
          0.25 * (img[static_cast<std::size_t>(2 * y) * w + 2 * x] +
                  img[static_cast<std::size_t>(2 * y) * w + 2 * x + 1] +
                  img[static_cast<std::size_t>(2 * y + 1) * w + 2 * x] +
                  img[static_cast<std::size_t>(2 * y + 1) * w + 2 * x + 1]);
  return out;
}

}  // namespace

MsSsimResult ms_ssim(const Tensor& x, const Tensor& y) {
  if (!x.same_shape(y)) throw ShapeError("ms_ssim: shape mismatch");
  int h = x.dim(1), w = x.dim(2);
  int scales = 0;
  for (int s = 1; s <= 5; ++s) {
    int m = std::min(h, w) >> (s - 1);
    if (m >= kWin) scales = s;
  }
  if (scales == 0) throw ShapeError("ms_ssim: image too small for one scale");
  double wsum = 0.0;
  for (int s = 0; s < scales; ++s) wsum += kMsSsimWeights[static_cast<std::size_t>(s)];

  double value = 1.0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> a(static_cast<std::size_t>(h) * w),
        b(static_cast<std::size_t>(h) * w);
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        a[static_cast<std::size_t>(yy) * w + xx] =
            std::clamp(x.at3(c, yy, xx), 0.0, 1.0) * 255.0;
        b[static_cast<std::size_t>(yy) * w + xx] =
            std::clamp(y.at3(c, yy, xx), 0.0, 1.0) * 255.0;
      }
    int ch = h, cw = w;
    double chan = 1.0;
    for (int s = 0; s < scales; ++s) {
      double l, cs;
      ssim_terms(a, b, ch, cw, l, cs);
      double wgt = kMsSsimWeights[static_cast<std::size_t>(s)] / wsum;
      double term = (s == scales - 1) ? std::max(l * cs, 0.0) : std::max(cs, 0.0);
      chan *= std::pow(term, wgt);
      if (s < scales - 1) {
        int nh, nw;
        a = downsample2(a, ch, cw, nh, nw);
        b = downsample2(b, ch, cw, nh, nw);
        ch = nh;
        cw = nw;
      }
    }
    value *= std::cbrt(chan);  // geometric mean over channels
  }
  MsSsimResult r;
  r.value = value;
  r.scales_used = scales;
  return r;
}

namespace {

// least-squares cubic fit q -> ln(rate)
std::array<double, 4> cubic_fit(const std::vector<RateQuality>& pts) {
  double s[7] = {0, 0, 0, 0, 0, 0, 0};
  double b[4] = {0, 0, 0, 0};
  for (const auto& p : pts) {
    double q = p.quality, lr = std::log(p.rate);
    double pw = 1.0;
    for (int i = 0; i < 7; ++i) {
      s[i] += pw;
      if (i < 4) b[i] += lr * pw;
      pw *= q;
    }
  }
  double m[4][5];
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) m[i][j] = s[i + j];
    m[i][4] = b[i];
  }
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r2 = col + 1; r2 < 4; ++r2)
      if (std::abs(m[r2][col]) > std::abs(m[piv][col])) piv = r2;
    std::swap(m[col], m[piv]);
    if (std::abs(m[col][col]) < 1e-14)
      throw DomainError("bd_rate: degenerate polynomial fit");
    for (int r2 = 0; r2 < 4; ++r2) {
      if (r2 == col) continue;
      double f = m[r2][col] / m[col][col];
      for (int j = col; j < 5; ++j) m[r2][j] -= f * m[col][j];
    }
  }
  return {m[0][4] / m[0][0], m[1][4] / m[1][1], m[2][4] / m[2][2],
          m[3][4] / m[3][3]};
}

double integrate_poly(const std::array<double, 4>& c, double lo, double hi) {
  auto F = [&](double q) {
    return c[0] * q + c[1] * q * q / 2 + c[2] * q * q * q / 3 +
           c[3] * q * q * q * q / 4;
  };
  return F(hi) - F(lo);
}

}  // namespace

double bd_rate(const std::vector<RateQuality>& anchor,
               const std::vector<RateQuality>& test) {
  if (anchor.size() < 4 || test.size() < 4)
    throw DomainError("bd_rate: need at least 4 points per curve");
  auto qrange = [](const std::vector<RateQuality>& v) {
    double lo = v[0].quality, hi = v[0].quality;
    for (const auto& p : v) {
      lo = std::min(lo, p.quality);
      hi = std::max(hi, p.quality);
    }
    return std::pair<double, double>(lo, hi);
  };
  auto [alo, ahi] = qrange(anchor);
  auto [tlo, thi] = qrange(test);
  double lo = std::max(alo, tlo), hi = std::min(ahi, thi);
  if (hi <= lo) throw DomainError("bd_rate: no quality overlap");
  auto ca = cubic_fit(anchor);
  auto ct = cubic_fit(test);
  double avg =
      (integrate_poly(ct, lo, hi) - integrate_poly(ca, lo, hi)) / (hi - lo);
  return 100.0 * (std::exp(avg) - 1.0);
}

ChannelStats channel_stats(const std::string& dataset_dir) {
  if (!std::filesystem::is_directory(dataset_dir))
    throw ConfigError("not a directory: " + dataset_dir);
  ChannelStats st;
  for (int c = 0; c < 3; ++c) st.histogram[c].assign(256, 0);
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dataset_dir))
    if (e.is_regular_file()) files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  double sums[3] = {0, 0, 0};
  for (const auto& f : files) {
    Tensor img;
    try {
      img = load_image(f);
    } catch (const FormatError&) {
      continue;  // skip non-image files
    }
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < img.dim(1); ++y)
        for (int x = 0; x < img.dim(2); ++x) {
          double v = img.at3(c, y, x);
          sums[c] += v;
          int bin = static_cast<int>(std::lround(v * 255.0));
          ++st.histogram[c][static_cast<std::size_t>(std::clamp(bin, 0, 255))];
        }
    st.pixel_count +=
        static_cast<std::uint64_t>(img.dim(1)) * static_cast<std::uint64_t>(img.dim(2));
  }
  if (st.pixel_count == 0) throw ConfigError("no readable images in " + dataset_dir);
  for (int c = 0; c < 3; ++c) {
    st.mean[c] = sums[c] / static_cast<double>(st.pixel_count);
    auto quantile = [&](double q) {
      std::uint64_t target =
          static_cast<std::uint64_t>(q * static_cast<double>(st.pixel_count));
      std::uint64_t acc = 0;
      for (int b = 0; b < 256; ++b) {
        acc += st.histogram[c][static_cast<std::size_t>(b)];
        if (acc >= target) return b / 255.0;
      }
      return 1.0;
    };
    st.q1[c] = quantile(0.25);
    st.median[c] = quantile(0.5);
    st.q3[c] = quantile(0.75);
  }
  return st;
}

EvalResult evaluate_model(Model& model, const std::string& dataset_dir, int jobs,
                          const CompressFlags& flags) {
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dataset_dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp")
      files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no images to evaluate in " + dataset_dir);
  model.frozen_tables();  // freeze once before any worker runs

  EvalResult result;
  result.per_image.resize(files.size());
  std::mutex next_mutex;
  std::size_t next = 0;
  auto worker = [&]() {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lk(next_mutex);
        if (next >= files.size()) return;
        i = next++;
      }
      Tensor img = load_image(files[i]);
      Bitstream bs = compress(img, model, flags);
      Tensor rec = decompress(bs, model);
      EvalRow row;
      row.file = files[i];
      row.point.bpp = bs.bpp();
      row.point.psnr = psnr(img, rec);
      row.point.ms_ssim = ms_ssim(img, rec).value;
      result.per_image[i] = std::move(row);
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  double tb = 0, tp = 0, tm = 0;
  std::uint64_t total_bits = 0, total_pixels = 0;
  for (const auto& r : result.per_image) {
    tb += r.point.bpp;
    tp += r.point.psnr;
    tm += r.point.ms_ssim;
  }
  (void)total_bits;
  (void)total_pixels;
  std::size_t n = result.per_image.size();
  result.mean = {tb / n, tp / n, tm / n};
  return result;
}

}  // namespace hquic

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace hquic {

namespace {

const std::array<cv::Scalar, 6> kPalette = {
    cv::Scalar(180, 119, 31),  cv::Scalar(14, 127, 255),
    cv::Scalar(44, 160, 44),   cv::Scalar(40, 39, 214),
    cv::Scalar(189, 103, 148), cv::Scalar(75, 86, 140)};

struct Axes {
  int x0 = 80, y0 = 60, x1 = 880, y1 = 600;  // plot rectangle in pixels
  double xlo, xhi, ylo, yhi;
  cv::Point map(double x, double y) const {
    int px = x0 + static_cast<int>(std::lround((x - xlo) / (xhi - xlo) * (x1 - x0)));
    int py = y1 - static_cast<int>(std::lround((y - ylo) / (yhi - ylo) * (y1 - y0)));
    return {px, py};
  }
};

void draw_frame(cv::Mat& canvas, const Axes& ax, const std::string& xlabel,
                const std::string& ylabel) {
  cv::rectangle(canvas, {ax.x0, ax.y0}, {ax.x1, ax.y1}, {0, 0, 0}, 1);
  char buf[64];
  for (int i = 0; i <= 5; ++i) {
    double fx = ax.xlo + (ax.xhi - ax.xlo) * i / 5.0;
    double fy = ax.ylo + (ax.yhi - ax.ylo) * i / 5.0;
    cv::Point px = ax.map(fx, ax.ylo);
    cv::Point py = ax.map(ax.xlo, fy);
    cv::line(canvas, px, {px.x, px.y + 5}, {0, 0, 0}, 1);
    cv::line(canvas, py, {py.x - 5, py.y}, {0, 0, 0}, 1);
    std::snprintf(buf, sizeof(buf), "%.3g", fx);
    cv::putText(canvas, buf, {px.x - 15, px.y + 22}, cv::FONT_HERSHEY_SIMPLEX,
                0.4, {0, 0, 0}, 1, cv::LINE_AA);
    std::snprintf(buf, sizeof(buf), "%.3g", fy);
    cv::putText(canvas, buf, {py.x - 58, py.y + 4}, cv::FONT_HERSHEY_SIMPLEX,
                0.4, {0, 0, 0}, 1, cv::LINE_AA);
  }
  cv::putText(canvas, xlabel, {(ax.x0 + ax.x1) / 2 - 40, ax.y1 + 45},
              cv::FONT_HERSHEY_SIMPLEX, 0.5, {0, 0, 0}, 1, cv::LINE_AA);
  cv::putText(canvas, ylabel, {10, ax.y0 - 15}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
              {0, 0, 0}, 1, cv::LINE_AA);
}

}  // namespace

void plot_rd_curves(
    const std::string& path, const std::string& quality_label,
    const std::vector<std::pair<std::string, std::vector<RateQuality>>>& curves) {
  if (curves.empty()) throw ConfigError("plot_rd_curves: no curves");
  Axes ax;
  ax.xlo = ax.ylo = std::numeric_limits<double>::infinity();
  ax.xhi = ax.yhi = -std::numeric_limits<double>::infinity();
  for (const auto& [name, pts] : curves)
    for (const auto& p : pts) {
      ax.xlo = std::min(ax.xlo, p.rate);
      ax.xhi = std::max(ax.xhi, p.rate);
      ax.ylo = std::min(ax.ylo, p.quality);
      ax.yhi = std::max(ax.yhi, p.quality);
    }
  double mx = std::max(1e-6, 0.05 * (ax.xhi - ax.xlo));
  double my = std::max(1e-6, 0.05 * (ax.yhi - ax.ylo));
  ax.xlo -= mx; ax.xhi += mx; ax.ylo -= my; ax.yhi += my;

  cv::Mat canvas(660, 940, CV_8UC3, cv::Scalar(255, 255, 255));
  draw_frame(canvas, ax, "bits per pixel", quality_label);
  int ci = 0;
  for (const auto& [name, pts] : curves) {
    auto color = kPalette[static_cast<std::size_t>(ci % 6)];
    std::vector<RateQuality> sorted = pts;
    std::sort(sorted.begin(), sorted.end(),
              [](const RateQuality& a, const RateQuality& b) { return a.rate < b.rate; });
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      cv::Point p = ax.map(sorted[i].rate, sorted[i].quality);
      cv::circle(canvas, p, 4, color, cv::FILLED, cv::LINE_AA);
      if (i) cv::line(canvas, ax.map(sorted[i - 1].rate, sorted[i - 1].quality),
                      p, color, 2, cv::LINE_AA);
    }
    cv::putText(canvas, name, {ax.x1 - 220, ax.y0 + 25 + 22 * ci},
                cv::FONT_HERSHEY_SIMPLEX, 0.5, color, 1, cv::LINE_AA);
    ++ci;
  }
  if (!cv::imwrite(path, canvas))
    throw FormatError("failed to write plot: " + path);
}

void plot_channel_distributions(
    const std::string& path,
    const std::vector<std::pair<std::string, ChannelStats>>& datasets) {
  if (datasets.empty()) throw ConfigError("plot_channel_distributions: no data");
  int rows = static_cast<int>(datasets.size());
  cv::Mat canvas(360 * rows, 940, CV_8UC3, cv::Scalar(255, 255, 255));
  const std::array<cv::Scalar, 3> rgb = {cv::Scalar(60, 60, 220),
                                         cv::Scalar(60, 180, 60),
                                         cv::Scalar(220, 100, 60)};
  for (int r = 0; r < rows; ++r) {
    const auto& [name, st] = datasets[static_cast<std::size_t>(r)];
    Axes ax;
    ax.x0 = 80; ax.x1 = 880;
    ax.y0 = 360 * r + 50; ax.y1 = 360 * r + 310;
    ax.xlo = 0; ax.xhi = 255;
    double peak = 1.0;
    for (int c = 0; c < 3; ++c)
      for (auto v : st.histogram[c])
        peak = std::max(peak, static_cast<double>(v) /
                                  static_cast<double>(st.pixel_count));
    ax.ylo = 0; ax.yhi = peak * 1.05;
    draw_frame(canvas, ax, "intensity", "frequency");
    cv::putText(canvas, name, {ax.x0, ax.y0 - 25}, cv::FONT_HERSHEY_SIMPLEX,
                0.6, {0, 0, 0}, 1, cv::LINE_AA);
    for (int c = 0; c < 3; ++c) {
      for (int b = 1; b < 256; ++b) {
        double f0 = static_cast<double>(st.histogram[c][static_cast<std::size_t>(b - 1)]) /
                    static_cast<double>(st.pixel_count);
        double f1 = static_cast<double>(st.histogram[c][static_cast<std::size_t>(b)]) /
                    static_cast<double>(st.pixel_count);
        cv::line(canvas, ax.map(b - 1, f0), ax.map(b, f1), rgb[static_cast<std::size_t>(c)],
                 1, cv::LINE_AA);
      }
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s mean=%.3f", c == 0 ? "R" : c == 1 ? "G" : "B",
                    st.mean[c]);
      cv::putText(canvas, buf, {ax.x1 - 180, ax.y0 + 20 + 20 * c},
                  cv::FONT_HERSHEY_SIMPLEX, 0.45, rgb[static_cast<std::size_t>(c)], 1,
                  cv::LINE_AA);
    }
  }
  if (!cv::imwrite(path, canvas))
    throw FormatError("failed to write plot: " + path);
}

}  // namespace hquic
