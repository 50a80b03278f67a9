#include "unadapt/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "unadapt/error.hpp"
#include "unadapt/util.hpp"

namespace unadapt {

void AugmentationSettings::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(hflip_probability) || !unit(erase_probability)) {
    throw ValidationError("augment: probabilities must lie in [0, 1]");
  }
  if (!(crop_min_scale > 0.0 && crop_min_scale <= 1.0)) throw ValidationError("augment: crop scale in (0, 1]");
  if (max_rotation_deg < 0.0 || max_rotation_deg > 180.0) throw ValidationError("augment: rotation in [0, 180]");
  if (jitter < 0.0 || jitter >= 1.0) throw ValidationError("augment: jitter in [0, 1)");
  if (erase_max_area < 0.0 || erase_max_area > 1.0) throw ValidationError("augment: erase area in [0, 1]");
}

AugmentationPolicy::AugmentationPolicy(AugmentationKind kind, std::uint64_t seed, AugmentationSettings settings)
    : kind_(kind), seed_(seed), settings_(settings) {
  settings_.validate();
}

AugmentationPolicy AugmentationPolicy::identity(AugmentationKind kind) {
  AugmentationSettings s;
  s.hflip_probability = 0.0;
  s.crop_min_scale = 1.0;
  s.max_rotation_deg = 0.0;
  s.jitter = 0.0;
  s.erase_probability = 0.0;
  s.erase_max_area = 0.0;
  return {kind, 0, s};
}

std::vector<std::string> AugmentationPolicy::ops() const {
  const auto& s = settings_;
  std::vector<std::string> out{"resize", fmt::format("hflip(p={})", s.hflip_probability)};
  if (kind_ == AugmentationKind::kStrong) {
    out.push_back(fmt::format("crop(min_scale={})", s.crop_min_scale));
    out.push_back(fmt::format("rotate(max_deg={})", s.max_rotation_deg));
    out.push_back(fmt::format("color_jitter({})", s.jitter));
    out.push_back(fmt::format("erase(p={},max_area={})", s.erase_probability, s.erase_max_area));
  }
  return out;
}

Image inference_view(const Image& image, std::size_t height, std::size_t width) {
  if (image.height == height && image.width == width) return image;
  return resize_bilinear(image, height, width);
}

Image hflip(const Image& image) {
  Image out = image;
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
  return out;
}

Image crop(const Image& image, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  if (top + height > image.height || left + width > image.width || height == 0 || width == 0) {
    throw ShapeError("crop window outside the image");
  }
  Image out(image.channels, height, width);
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) out.at(c, y, x) = image.at(c, top + y, left + x);
  return out;
}

Image rotate(const Image& image, double degrees) {
  if (degrees == 0.0) return image;
  const double a = degrees * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  const double cy = (static_cast<double>(image.height) - 1) / 2, cx = (static_cast<double>(image.width) - 1) / 2;
  const auto clampi = [](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n - 1)));
  };
  Image out(image.channels, image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double sy = std::clamp(cy + ca * dy - sa * dx, 0.0, static_cast<double>(image.height - 1));
      const double sx = std::clamp(cx + sa * dy + ca * dx, 0.0, static_cast<double>(image.width - 1));
      const std::size_t y0 = clampi(std::floor(sy), image.height), x0 = clampi(std::floor(sx), image.width);
      const std::size_t y1 = std::min(y0 + 1, image.height - 1), x1 = std::min(x0 + 1, image.width - 1);
      const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double v = (1 - fy) * ((1 - fx) * image.at(c, y0, x0) + fx * image.at(c, y0, x1)) +
                         fy * ((1 - fx) * image.at(c, y1, x0) + fx * image.at(c, y1, x1));
        out.at(c, y, x) = static_cast<float>(v);
      }
    }
  }
  return out;
}

Image AugmentationPolicy::apply(const Image& image, const std::string& item_id, std::size_t epoch,
                                std::size_t height, std::size_t width) const {
  const auto& s = settings_;
  std::mt19937_64 rng(derive_seed(seed_, kind_ == AugmentationKind::kWeak ? "aug-weak" : "aug-strong",
                                  fnv1a(item_id), epoch));
  std::uniform_real_distribution<double> u(0.0, 1.0);

  Image x = image;
  if (kind_ == AugmentationKind::kStrong && s.crop_min_scale < 1.0) {
    const double scale = s.crop_min_scale + (1.0 - s.crop_min_scale) * u(rng);
    const auto ch = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(scale * x.height)));
    const auto cw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(scale * x.width)));
    const auto top = static_cast<std::size_t>(u(rng) * static_cast<double>(x.height - ch + 1));
    const auto left = static_cast<std::size_t>(u(rng) * static_cast<double>(x.width - cw + 1));
    x = crop(x, std::min(top, x.height - ch), std::min(left, x.width - cw), ch, cw);
  }
  x = inference_view(x, height, width);
  if (u(rng) < s.hflip_probability) x = hflip(x);
  if (kind_ == AugmentationKind::kWeak) return x;

  if (s.max_rotation_deg > 0.0) x = rotate(x, (2 * u(rng) - 1) * s.max_rotation_deg);

  if (s.jitter > 0.0) {
    const double brightness = 1.0 + (2 * u(rng) - 1) * s.jitter;
    const double contrast = 1.0 + (2 * u(rng) - 1) * s.jitter;
    const std::size_t plane = x.height * x.width;
    for (std::size_t c = 0; c < x.channels; ++c) {
      float* p = x.pixels.data() + c * plane;
      double mean = 0.0;
      for (std::size_t i = 0; i < plane; ++i) mean += p[i];
      mean /= static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) {
        p[i] = static_cast<float>(brightness * ((p[i] - mean) * contrast + mean));
      }
    }
  }

  if (u(rng) < s.erase_probability && s.erase_max_area > 0.0) {
    const double area = s.erase_max_area * u(rng) * static_cast<double>(x.height * x.width);
    const double aspect = std::exp((2 * u(rng) - 1) * std::log(2.0));
    const auto eh = std::clamp<std::size_t>(static_cast<std::size_t>(std::sqrt(area * aspect)), 1, x.height);
    const auto ew = std::clamp<std::size_t>(static_cast<std::size_t>(std::sqrt(area / aspect)), 1, x.width);
    const auto top = std::min(static_cast<std::size_t>(u(rng) * static_cast<double>(x.height - eh + 1)), x.height - eh);
    const auto left = std::min(static_cast<std::size_t>(u(rng) * static_cast<double>(x.width - ew + 1)), x.width - ew);
    // Erased pixels take the channel mean so the patch carries no new signal.
    const std::size_t plane = x.height * x.width;
    for (std::size_t c = 0; c < x.channels; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < plane; ++i) mean += x.pixels[c * plane + i];
      mean /= static_cast<double>(plane);
      for (std::size_t y = top; y < top + eh; ++y)
        for (std::size_t xx = left; xx < left + ew; ++xx) x.at(c, y, xx) = static_cast<float>(mean);
    }
  }
  return x;
}

}  // namespace unadapt
