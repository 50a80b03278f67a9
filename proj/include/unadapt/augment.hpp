#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "unadapt/image.hpp"

namespace unadapt {

enum class AugmentationKind { kWeak, kStrong };

// Intensities of the stochastic transforms. The weak policy uses only the
// flip; the strong policy applies every transform.
struct AugmentationSettings {
  double hflip_probability = 0.5;
  double crop_min_scale = 0.7;     // side fraction kept by the random crop
  double max_rotation_deg = 15.0;
  double jitter = 0.2;             // brightness and contrast factors in [1-j, 1+j]
  double erase_probability = 0.25;
  double erase_max_area = 0.1;

  void validate() const;
};

class AugmentationPolicy {
 public:
  AugmentationPolicy(AugmentationKind kind, std::uint64_t seed, AugmentationSettings settings = {});

  static AugmentationPolicy weak(std::uint64_t seed, AugmentationSettings settings = {}) {
    return {AugmentationKind::kWeak, seed, settings};
  }
  static AugmentationPolicy strong(std::uint64_t seed, AugmentationSettings settings = {}) {
    return {AugmentationKind::kStrong, seed, settings};
  }
  // Same kind, but every stochastic op disabled: resize only.
  static AugmentationPolicy identity(AugmentationKind kind);

  AugmentationKind kind() const { return kind_; }
  std::uint64_t seed() const { return seed_; }
  const AugmentationSettings& settings() const { return settings_; }

  // Ordered transform descriptors, e.g. "resize", "hflip(p=0.5)".
  std::vector<std::string> ops() const;

  // Deterministic in (seed, item_id, epoch). Output has the target size.
  Image apply(const Image& image, const std::string& item_id, std::size_t epoch, std::size_t height,
              std::size_t width) const;

 private:
  AugmentationKind kind_;
  std::uint64_t seed_;
  AugmentationSettings settings_;
};

// Deterministic evaluation view: resize only.
Image inference_view(const Image& image, std::size_t height, std::size_t width);

Image hflip(const Image& image);
// Rotation about the centre with bilinear sampling and edge clamping.
Image rotate(const Image& image, double degrees);
Image crop(const Image& image, std::size_t top, std::size_t left, std::size_t height, std::size_t width);

}  // namespace unadapt
