#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "hquic/rng.hpp"
#include "hquic/tensor.hpp"

namespace testutil {

// scratch directory unique to one test run, removed on destruction
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = (std::filesystem::temp_directory_path() /
             ("hquic_test_" + tag + "_" + std::to_string(::getpid())))
                .string();
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (std::filesystem::path(path_) / name).string();
  }

 private:
  std::string path_;
};

inline hquic::Tensor random_image(int h, int w, std::uint64_t seed) {
  hquic::Rng rng(seed);
  hquic::Tensor img({3, h, w});
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform();
  return img;
}

// smooth low-frequency image; compresses plausibly and exercises ALTC
// low-frequency sinusoid with configurable amplitude; easier corpus for
// short CPU training runs
inline hquic::Tensor gentle_image(int h, int w, std::uint64_t seed, double amp,
                                  double max_freq) {
  hquic::Rng rng(seed);
  double fx[3], fy[3], ph[3];
  for (int c = 0; c < 3; ++c) {
    fx[c] = 0.3 + max_freq * rng.uniform();
    fy[c] = 0.3 + max_freq * rng.uniform();
    ph[c] = 6.28318 * rng.uniform();
  }
  hquic::Tensor img({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.at3(c, y, x) =
            0.5 + amp * std::sin(6.28318 * (fx[c] * x / w + fy[c] * y / h) + ph[c]);
  return img;
}

inline hquic::Tensor smooth_image(int h, int w, std::uint64_t seed) {
  hquic::Rng rng(seed);
  double fx[3], fy[3], ph[3];
  for (int c = 0; c < 3; ++c) {
    fx[c] = 0.5 + 2.5 * rng.uniform();
    fy[c] = 0.5 + 2.5 * rng.uniform();
    ph[c] = 6.28318 * rng.uniform();
  }
  hquic::Tensor img({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.at3(c, y, x) =
            0.5 + 0.4 * std::sin(fx[c] * x / w * 6.28318 + ph[c]) *
                      std::cos(fy[c] * y / h * 6.28318);
  return img;
}

}  // namespace testutil
