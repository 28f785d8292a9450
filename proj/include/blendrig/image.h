#pragma once

#include <filesystem>
#include <vector>

namespace blendrig {

// Row-major, interleaved channels, values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

  int pixelCount() const { return width * height; }
  double& at(int x, int y, int c = 0) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
  double at(int x, int y, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

// 8-bit PNG. RGB and grayscale are supported; `channels` selects the output
// layout (1 = gray, 3 = RGB) regardless of the file's own format.
Image loadPng(const std::filesystem::path& path, int channels);
void savePng(const Image& image, const std::filesystem::path& path);

// Foreground = gray >= 128, stored as 0/1.
Image loadMask(const std::filesystem::path& path);

// Bilinear resample to a new size (identity when the size already matches).
Image resample(const Image& image, int width, int height);

}  // namespace blendrig
