#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace unadapt {

// Planar (channel, row, column) float image.
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
  bool operator==(const Image&) const = default;
};

// Reads .npy (little-endian float32, C-order, shape (H,W) or (C,H,W)) and
// binary/ascii PGM (P5/P2, 8 or 16 bit, scaled to [0,1]).
Image load_image(const std::filesystem::path& path);
void save_npy(const Image& image, const std::filesystem::path& path);

// Bilinear resampling with edge clamping.
Image resize_bilinear(const Image& src, std::size_t height, std::size_t width);

}  // namespace unadapt
