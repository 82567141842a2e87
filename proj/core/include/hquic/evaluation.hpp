#pragma once

#include <string>
#include <vector>

#include "hquic/codec.hpp"
#include "hquic/tensor.hpp"

namespace hquic {

struct RDPoint {
  double bpp = 0.0;
  double psnr = 0.0;  // dB; infinity for identical images
  double ms_ssim = 0.0;
};

// 10*log10(255^2/MSE) after clamping and 8-bit quantization of both inputs
double psnr(const Tensor& x, const Tensor& y);

struct MsSsimResult {
  double value = 0.0;
  int scales_used = 5;  // fewer for small images, weights renormalized
};

MsSsimResult ms_ssim(const Tensor& x, const Tensor& y);

// Bjontegaard delta rate in percent between two RD curves; quality is PSNR
// or MS-SSIM depending on which field the caller filled into `quality`.
struct RateQuality {
  double rate = 0.0;     // bits per pixel
  double quality = 0.0;  // higher is better
};

double bd_rate(const std::vector<RateQuality>& anchor,
               const std::vector<RateQuality>& test);

struct ChannelStats {
  // index 0..2 = R,G,B
  double mean[3] = {0, 0, 0};
  double median[3] = {0, 0, 0};
  double q1[3] = {0, 0, 0};
  double q3[3] = {0, 0, 0};
  std::vector<std::uint64_t> histogram[3];  // 256 bins each
  std::uint64_t pixel_count = 0;
};

ChannelStats channel_stats(const std::string& dataset_dir);

struct EvalRow {
  std::string file;
  RDPoint point;
};

struct EvalResult {
  std::vector<EvalRow> per_image;
  RDPoint mean;
};

// compress+decompress every image through the real bitstream; bpp from
// actual byte counts including side info and header
EvalResult evaluate_model(Model& model, const std::string& dataset_dir,
                          int jobs = 1, const CompressFlags& flags = {});

// figure rendering (PNG via OpenCV drawing)
void plot_rd_curves(const std::string& path, const std::string& quality_label,
                    const std::vector<std::pair<std::string, std::vector<RateQuality>>>& curves);
void plot_channel_distributions(
    const std::string& path,
    const std::vector<std::pair<std::string, ChannelStats>>& datasets);

}  // namespace hquic
