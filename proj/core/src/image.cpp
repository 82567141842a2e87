#include "hquic/image.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "hquic/errors.hpp"
#include "hquic/rng.hpp"

namespace hquic {

Tensor load_image(const std::string& path) {
  if (!std::filesystem::exists(path))
    throw NotFoundError("no such image file: " + path);
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw FormatError("cannot decode image: " + path);
  Tensor out({3, m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y) {
    const cv::Vec3b* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) {
      // OpenCV loads BGR
      out.at3(0, y, x) = row[x][2] / 255.0;
      out.at3(1, y, x) = row[x][1] / 255.0;
      out.at3(2, y, x) = row[x][0] / 255.0;
    }
  }
  return out;
}

void save_image(const std::string& path, const Tensor& img) {
  if (img.ndim() != 3 || img.dim(0) != 3)
    throw ShapeError("save_image expects (3,H,W), got " + img.shape_str());
  int h = img.dim(1), w = img.dim(2);
  cv::Mat m(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    cv::Vec3b* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(img.at3(c, y, x), 0.0, 1.0);
        row[x][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  if (!cv::imwrite(path, m)) throw FormatError("cannot write image: " + path);
}

Tensor random_crop(const Tensor& img, int size, std::uint64_t seed) {
  int h = img.dim(1), w = img.dim(2);
  if (h < size || w < size)
    throw ShapeError("random_crop: image " + img.shape_str() +
                     " smaller than crop " + std::to_string(size));
  Rng rng(seed);
  int oy = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h - size + 1)));
  int ox = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - size + 1)));
  Tensor out({3, size, size});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        out.at3(c, y, x) = img.at3(c, oy + y, ox + x);
  return out;
}

namespace {

// reflect index without repeating the edge sample (abcb a...)
int reflect(int i, int n) {
  if (n == 1) return 0;
  int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

PaddedImage pad_to_multiple(const Tensor& img, int m) {
  if (m < 1) throw DomainError("pad_to_multiple: m must be >= 1");
  int h = img.dim(1), w = img.dim(2);
  int H = (h + m - 1) / m * m;
  int W = (w + m - 1) / m * m;
  PaddedImage p;
  p.orig_h = h;
  p.orig_w = w;
  if (H == h && W == w) {
    p.img = img;
    return p;
  }
  Tensor out({img.dim(0), H, W});
  for (int c = 0; c < img.dim(0); ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        out.at3(c, y, x) = img.at3(c, reflect(y, h), reflect(x, w));
  p.img = std::move(out);
  return p;
}

Tensor unpad(const Tensor& img, int orig_h, int orig_w) {
  if (img.dim(1) == orig_h && img.dim(2) == orig_w) return img;
  Tensor out({img.dim(0), orig_h, orig_w});
  for (int c = 0; c < img.dim(0); ++c)
    for (int y = 0; y < orig_h; ++y)
      for (int x = 0; x < orig_w; ++x) out.at3(c, y, x) = img.at3(c, y, x);
  return out;
}

Tensor clamp01(const Tensor& img) {
  Tensor out = img;
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = std::clamp(out[i], 0.0, 1.0);
  return out;
}

Tensor quantize_8bit(const Tensor& img) {
  Tensor out = img;
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = std::lround(std::clamp(out[i], 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

}  // namespace hquic
