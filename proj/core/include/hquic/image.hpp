#pragma once

#include <string>
#include <utility>

#include "hquic/tensor.hpp"

namespace hquic {

// Images are (3,H,W) tensors, channels R,G,B, values in [0,1] after load.
// Corrected images x~ may leave [0,1]; nothing here clamps except save().

Tensor load_image(const std::string& path);
// clamps to [0,1], quantizes to 8 bits, writes PNG/JPEG/BMP by extension
void save_image(const std::string& path, const Tensor& img);

Tensor random_crop(const Tensor& img, int size, std::uint64_t seed);

struct PaddedImage {
  Tensor img;
  int orig_h = 0;
  int orig_w = 0;
};

// reflect-pads right/bottom so both dims are multiples of m
PaddedImage pad_to_multiple(const Tensor& img, int m);
Tensor unpad(const Tensor& img, int orig_h, int orig_w);

Tensor clamp01(const Tensor& img);
// round to the 8-bit grid (values stay in [0,1] steps of 1/255)
Tensor quantize_8bit(const Tensor& img);

}  // namespace hquic
