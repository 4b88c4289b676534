#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fovdet {

// Interleaved H x W x C image with values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<double> data;  // row-major, interleaved channels

  Image() = default;
  Image(int h, int w, int c = 3)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, 0.0) {}

  double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

// Binary array file: magic "FDIM", then u32 H, W, C, elem type
// (0 = float32), then row-major data.
void write_image(const std::string& path, const Image& img);
Image read_image(const std::string& path);

// Content hash (of the float32 encoding, matching the on-disk representation).
std::uint64_t image_hash(const Image& img);

double mean_abs_diff(const Image& a, const Image& b);

}  // namespace fovdet
