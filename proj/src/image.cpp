#include "blendrig/image.h"

#include "blendrig/error.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace blendrig {

Image loadPng(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) {
    throw InputError("loadPng: channels must be 1 or 3");
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&img, path.string().c_str()) == 0) {
    throw InputError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(img));
  if (png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr) == 0) {
    throw InputError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  Image out(static_cast<int>(img.width), static_cast<int>(img.height), channels);
  for (size_t k = 0; k < buffer.size(); ++k) {
    out.data[k] = buffer[k] / 255.0;
  }
  return out;
}

void savePng(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) {
    throw InputError("savePng: channels must be 1 or 3");
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(image.data.size());
  for (size_t k = 0; k < buffer.size(); ++k) {
    const double v = std::isfinite(image.data[k]) ? std::clamp(image.data[k], 0.0, 1.0) : 0.0;
    buffer[k] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  if (png_image_write_to_file(&img, path.string().c_str(), 0, buffer.data(), 0, nullptr) == 0) {
    throw InputError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

Image loadMask(const std::filesystem::path& path) {
  Image gray = loadPng(path, 1);
  for (double& v : gray.data) {
    v = v * 255.0 >= 127.5 ? 1.0 : 0.0;
  }
  return gray;
}

Image resample(const Image& image, int width, int height) {
  if (image.width == width && image.height == height) {
    return image;
  }
  Image out(width, height, image.channels);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
      const int x0 = static_cast<int>(fx);
      const int y0 = static_cast<int>(fy);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const int y1 = std::min(y0 + 1, image.height - 1);
      const double wx = fx - x0;
      const double wy = fy - y0;
      for (int c = 0; c < image.channels; ++c) {
        out.at(x, y, c) = (1 - wy) * ((1 - wx) * image.at(x0, y0, c) + wx * image.at(x1, y0, c)) +
                          wy * ((1 - wx) * image.at(x0, y1, c) + wx * image.at(x1, y1, c));
      }
    }
  }
  return out;
}

}  // namespace blendrig
