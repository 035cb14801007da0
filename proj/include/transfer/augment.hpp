#pragma once

// Training-time augmentation: rotation, crop-and-resize, horizontal flip and
// random erasing.

#include "transfer/rng.hpp"
#include "transfer/tensor.hpp"

namespace transfer {

struct AugmentConfig {
  double max_rotation_deg = 15.0;
  double crop_fraction = 0.875;  // side of the crop relative to the image
  double flip_probability = 0.5;
  double erase_probability = 0.5;
  double erase_min_area = 0.02;
  double erase_max_area = 0.20;
  double erase_min_aspect = 0.3;
};

struct EraseRect {
  std::size_t top = 0, left = 0, height = 0, width = 0;
  double area_fraction(std::size_t h, std::size_t w) const {
    return static_cast<double>(height * width) / static_cast<double>(h * w);
  }
};

/// Target area uniform in [min_area, max_area], log-uniform aspect ratio;
/// resampled until the rounded rectangle fits and its area stays in range.
EraseRect sample_erase_rect(std::size_t h, std::size_t w, const AugmentConfig& config, Rng& rng);

/// Mirrors [h x w x c] left to right.
Tensor horizontal_flip(const Tensor& image);

/// Rotation about the centre and a random crop resampled back to full size
/// in one bilinear pass (edge pixels replicated), then flip and erase with
/// uniform noise. Output has the input shape with values in [0, 1].
Tensor augment(const Tensor& image, const AugmentConfig& config, Rng& rng);

}  // namespace transfer
