#include "transfer/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "transfer/errors.hpp"

namespace transfer {
namespace {

void check_image(const Tensor& image) {
  if (image.rank() != 3) throw DimensionError("augment: expected h x w x c, got " + shape_string(image.shape()));
}

}  // namespace

EraseRect sample_erase_rect(std::size_t h, std::size_t w, const AugmentConfig& config, Rng& rng) {
  const double total = static_cast<double>(h * w);
  const double log_lo = std::log(config.erase_min_aspect);
  const double log_hi = -log_lo;
  for (;;) {
    const double area = rng.uniform(config.erase_min_area, config.erase_max_area) * total;
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const auto eh = static_cast<std::size_t>(std::lround(std::sqrt(area * aspect)));
    const auto ew = static_cast<std::size_t>(std::lround(std::sqrt(area / aspect)));
    if (eh == 0 || ew == 0 || eh > h || ew > w) continue;
    EraseRect r{0, 0, eh, ew};
    const double frac = r.area_fraction(h, w);
    if (frac < config.erase_min_area || frac > config.erase_max_area) continue;
    r.top = rng.index(h - eh + 1);
    r.left = rng.index(w - ew + 1);
    return r;
  }
}

Tensor horizontal_flip(const Tensor& image) {
  check_image(image);
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  std::vector<double> out(image.numel());
  const auto in = image.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) out[(y * w + x) * c + k] = in[(y * w + (w - 1 - x)) * c + k];
  return Tensor(image.shape(), std::move(out));
}

Tensor augment(const Tensor& image, const AugmentConfig& config, Rng& rng) {
  check_image(image);
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const double angle = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg) * std::numbers::pi / 180.0;
  const double crop_h = config.crop_fraction * static_cast<double>(h);
  const double crop_w = config.crop_fraction * static_cast<double>(w);
  const double off_y = rng.uniform(0.0, static_cast<double>(h) - crop_h);
  const double off_x = rng.uniform(0.0, static_cast<double>(w) - crop_w);
  const bool flip = rng.bernoulli(config.flip_probability);
  const bool erase = rng.bernoulli(config.erase_probability);

  const double cy = 0.5 * static_cast<double>(h - 1), cx = 0.5 * static_cast<double>(w - 1);
  const double cos_a = std::cos(angle), sin_a = std::sin(angle);
  const auto in = image.data();
  const auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x, std::size_t k) {
    y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(h) - 1);
    x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(w) - 1);
    return in[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * c + k];
  };

  std::vector<double> out(image.numel());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      // Output pixel -> crop window -> unrotated source position.
      const double py = off_y + (static_cast<double>(y) + 0.5) * crop_h / static_cast<double>(h) - 0.5 - cy;
      const double px = off_x + (static_cast<double>(x) + 0.5) * crop_w / static_cast<double>(w) - 0.5 - cx;
      const double sy = cos_a * py - sin_a * px + cy;
      const double sx = sin_a * py + cos_a * px + cx;
      const double fy = std::floor(sy), fx = std::floor(sx);
      const double ty = sy - fy, tx = sx - fx;
      const auto y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
      const std::size_t ox = flip ? w - 1 - x : x;
      for (std::size_t k = 0; k < c; ++k) {
        const double v = (1 - ty) * ((1 - tx) * at(y0, x0, k) + tx * at(y0, x0 + 1, k)) +
                         ty * ((1 - tx) * at(y0 + 1, x0, k) + tx * at(y0 + 1, x0 + 1, k));
        out[(y * w + ox) * c + k] = v;
      }
    }

  if (erase) {
    const EraseRect r = sample_erase_rect(h, w, config, rng);
    for (std::size_t y = r.top; y < r.top + r.height; ++y)
      for (std::size_t x = r.left; x < r.left + r.width; ++x)
        for (std::size_t k = 0; k < c; ++k) out[(y * w + x) * c + k] = rng.uniform();
  }
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  return Tensor(image.shape(), std::move(out));
}

}  // namespace transfer
