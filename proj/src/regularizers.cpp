#include "transfer/regularizers.hpp"

#include <algorithm>
#include <ostream>

#include "transfer/errors.hpp"
#include "transfer/ops.hpp"

namespace transfer {
namespace {

void check_probability(double p, const char* who, bool allow_one) {
  if (!(p >= 0.0 && (allow_one ? p <= 1.0 : p < 1.0)))
    throw ConfigError(std::string(who) + ": drop probability " + std::to_string(p) + " outside " +
                      (allow_one ? "[0, 1]" : "[0, 1)"));
}

struct SpatialDims {
  std::size_t n, h, w, c;
};

SpatialDims spatial_dims(const Tensor& x, const char* who) {
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2)};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  throw DimensionError(std::string(who) + ": expected h x w x c or n x h x w x c, got " +
                       shape_string(x.shape()));
}

}  // namespace

DropDecision draw_drop(std::size_t group_size, double p, Mode mode, Rng& rng) {
  DropDecision d;
  d.group_size = group_size;
  d.probability = p;
  d.rng_token = rng.draws();
  if (mode == Mode::kInference || p == 0.0) return d;
  if (rng.uniform() < p) d.dropped_index = static_cast<std::size_t>(rng.index(group_size));
  return d;
}

MadResult mad_drop(std::span<const Tensor> group, double p, Mode mode, Rng& rng) {
  if (group.empty()) throw UsageError("mad_drop: empty group");
  check_probability(p, "mad_drop", true);
  MadResult out;
  out.group.assign(group.begin(), group.end());
  out.decision = draw_drop(group.size(), p, mode, rng);
  if (out.decision.dropped_index) {
    Tensor& victim = out.group[*out.decision.dropped_index];
    victim = scale(victim, 0.0);
  }
  return out;
}

BatchedMadResult mad_drop_per_sample(std::span<const Tensor> group, double p, Mode mode, Rng& rng) {
  if (group.empty()) throw UsageError("mad_drop_per_sample: empty group");
  check_probability(p, "mad_drop_per_sample", true);
  const Shape& shape = group[0].shape();
  if (shape.empty()) throw DimensionError("mad_drop_per_sample: members need a batch axis");
  for (const auto& t : group)
    if (t.shape() != shape)
      throw DimensionError("mad_drop_per_sample: member shape " + shape_string(t.shape()) +
                           " differs from " + shape_string(shape));
  const std::size_t n = shape[0];
  BatchedMadResult out;
  out.group.assign(group.begin(), group.end());
  out.decisions.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.decisions.push_back(draw_drop(group.size(), p, mode, rng));
  Shape mask_shape(shape.size(), 1);
  mask_shape[0] = n;
  for (std::size_t b = 0; b < group.size(); ++b) {
    std::vector<double> mask(n, 1.0);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i)
      if (out.decisions[i].dropped_index == b) {
        mask[i] = 0.0;
        any = true;
      }
    if (any) out.group[b] = mul(group[b], Tensor(mask_shape, std::move(mask)));
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng) {
  check_probability(p, "dropout", false);
  if (mode == Mode::kInference || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

double drop_block_gamma(double p, std::size_t h, std::size_t w, std::size_t block_size) {
  const double bs = static_cast<double>(block_size);
  return p * static_cast<double>(h * w) /
         (bs * bs * static_cast<double>(h - block_size + 1) * static_cast<double>(w - block_size + 1));
}

Tensor drop_block(const Tensor& x, double p, std::size_t block_size, Mode mode, Rng& rng) {
  const auto [n, h, w, c] = spatial_dims(x, "drop_block");
  if (block_size % 2 == 0 || block_size == 0 || block_size > std::min(h, w))
    throw ConfigError("drop_block: block size " + std::to_string(block_size) +
                      " must be odd and at most " + std::to_string(std::min(h, w)));
  check_probability(p, "drop_block", true);
  if (mode == Mode::kInference || p == 0.0) return x;
  const double gamma = std::min(1.0, drop_block_gamma(p, h, w, block_size));
  const auto r = static_cast<std::ptrdiff_t>(block_size / 2);
  std::vector<double> mask(x.numel(), 1.0);
  const std::size_t per_sample = h * w * c;
  for (std::size_t b = 0; b < n; ++b) {
    double* m = mask.data() + b * per_sample;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        for (std::size_t ch = 0; ch < c; ++ch) {
          if (!(rng.uniform() < gamma)) continue;
          const auto y0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(y) - r);
          const auto y1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(h) - 1, static_cast<std::ptrdiff_t>(y) + r);
          const auto x0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(xx) - r);
          const auto x1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w) - 1, static_cast<std::ptrdiff_t>(xx) + r);
          for (auto yy = y0; yy <= y1; ++yy)
            for (auto xw = x0; xw <= x1; ++xw) m[(static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xw)) * c + ch] = 0.0;
        }
    const auto kept = static_cast<double>(std::count(m, m + per_sample, 1.0));
    const double factor = kept > 0.0 ? static_cast<double>(per_sample) / kept : 0.0;
    for (std::size_t i = 0; i < per_sample; ++i) m[i] *= factor;
  }
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

Tensor spatial_dropout(const Tensor& x, double p, Mode mode, Rng& rng) {
  const auto [n, h, w, c] = spatial_dims(x, "spatial_dropout");
  check_probability(p, "spatial_dropout", false);
  if (mode == Mode::kInference || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(n * c);
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  const Shape mask_shape = x.rank() == 4 ? Shape{n, 1, 1, c} : Shape{1, 1, c};
  return mul(x, Tensor(mask_shape, std::move(mask)));
}

void write_drop_log(std::ostream& os, std::span<const DropLogRow> rows) {
  os << "step,site,dropped_index\n";
  for (const auto& r : rows) {
    os << r.step << ',' << r.site << ',';
    if (r.dropped_index)
      os << *r.dropped_index;
    else
      os << "none";
    os << '\n';
  }
}

}  // namespace transfer
