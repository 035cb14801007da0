#include "transfer/visualizer.hpp"

#include <algorithm>
#include <cmath>

#include "transfer/errors.hpp"

namespace transfer {
namespace {

constexpr double kRowSumTolerance = 1e-6;

void normalize_rows(std::vector<double>& m, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += m[i * n + j];
    for (std::size_t j = 0; j < n; ++j) m[i * n + j] /= s;
  }
}

std::size_t grid_side(std::size_t count) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(count))));
  if (side * side != count) throw DimensionError("heatmap: " + std::to_string(count) + " scores do not form a square grid");
  return side;
}

}  // namespace

HeadReduce parse_head_reduce(const std::string& name) {
  if (name == "mean") return HeadReduce::kMean;
  if (name == "max") return HeadReduce::kMax;
  if (name == "min") return HeadReduce::kMin;
  throw ConfigError("head reduction must be mean, max or min, got '" + name + "'");
}

Tensor reduce_heads(const Tensor& attention, HeadReduce how) {
  Shape s = attention.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3 || s[1] != s[2])
    throw DimensionError("reduce_heads: expected heads x N x N, got " + shape_string(attention.shape()));
  const std::size_t heads = s[0], n = s[1], nn = n * n;
  const auto a = attention.data();
  std::vector<double> out(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(nn));
  for (std::size_t h = 1; h < heads; ++h)
    for (std::size_t i = 0; i < nn; ++i) {
      const double v = a[h * nn + i];
      switch (how) {
        case HeadReduce::kMean: out[i] += v; break;
        case HeadReduce::kMax: out[i] = std::max(out[i], v); break;
        case HeadReduce::kMin: out[i] = std::min(out[i], v); break;
      }
    }
  if (how == HeadReduce::kMean) {
    for (double& v : out) v /= static_cast<double>(heads);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) sum += out[i * n + j];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = sum > 0.0 ? out[i * n + j] / sum : 1.0 / static_cast<double>(n);
    }
  }
  return Tensor({n, n}, std::move(out));
}

Tensor attention_rollout(std::span<const Tensor> per_block) {
  if (per_block.empty()) throw UsageError("attention_rollout: no attention matrices");
  const std::size_t n = per_block[0].dim(0);
  if (n < 2) throw DimensionError("attention_rollout: need a class token and at least one patch");
  std::vector<double> rollout(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) rollout[i * n + i] = 1.0;
  std::vector<double> step(n * n), next(n * n);
  for (std::size_t b = 0; b < per_block.size(); ++b) {
    const Tensor& a = per_block[b];
    if (a.shape() != Shape{n, n})
      throw DimensionError("attention_rollout: block " + std::to_string(b) + " has shape " + shape_string(a.shape()));
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = a[i * n + j];
        if (!(v >= 0.0)) throw ContractError("attention_rollout: negative or NaN entry in block " + std::to_string(b));
        s += v;
      }
      if (std::abs(s - 1.0) > kRowSumTolerance)
        throw ContractError("attention_rollout: row " + std::to_string(i) + " of block " + std::to_string(b) +
                            " sums to " + std::to_string(s));
    }
    for (std::size_t i = 0; i < n * n; ++i) step[i] = a[i];
    for (std::size_t i = 0; i < n; ++i) step[i * n + i] += 1.0;
    normalize_rows(step, n);
    // Later blocks act on the output of earlier ones: R <- step * R.
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) {
        const double v = step[i * n + k];
        for (std::size_t j = 0; j < n; ++j) next[i * n + j] += v * rollout[k * n + j];
      }
    std::swap(rollout, next);
  }
  std::vector<double> scores(rollout.begin() + 1, rollout.begin() + static_cast<std::ptrdiff_t>(n));
  double total = 0.0;
  for (double v : scores) total += v;
  if (total <= 1e-300) {
    std::fill(scores.begin(), scores.end(), 1.0 / static_cast<double>(n - 1));
  } else {
    for (double& v : scores) v /= total;
  }
  return Tensor({n - 1}, std::move(scores));
}

Tensor combine_with_map(const Tensor& scores, const Tensor& grid_map) {
  if (scores.numel() != grid_map.numel())
    throw DimensionError("combine_with_map: " + std::to_string(scores.numel()) + " scores vs map " +
                         shape_string(grid_map.shape()));
  std::vector<double> out(scores.numel());
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) total += out[i] = scores[i] * grid_map[i];
  if (total <= 1e-300) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
  } else {
    for (double& v : out) v /= total;
  }
  const std::size_t count = out.size();
  return Tensor({count}, std::move(out));
}

std::array<double, 3> jet(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const auto ramp = [&](double centre) { return std::clamp(1.5 - std::abs(4.0 * v - centre), 0.0, 1.0); };
  return {ramp(3.0), ramp(2.0), ramp(1.0)};
}

Tensor upsample_bilinear(const Tensor& grid, std::size_t size) {
  if (grid.rank() != 2) throw DimensionError("upsample_bilinear: expected h x w, got " + shape_string(grid.shape()));
  const std::size_t h = grid.dim(0), w = grid.dim(1);
  std::vector<double> out(size * size);
  const auto coord = [](std::size_t o, std::size_t in_n, std::size_t out_n) {
    const double c = (static_cast<double>(o) + 0.5) * static_cast<double>(in_n) / static_cast<double>(out_n) - 0.5;
    return std::clamp(c, 0.0, static_cast<double>(in_n - 1));
  };
  for (std::size_t y = 0; y < size; ++y) {
    const double sy = coord(y, h, size);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < size; ++x) {
      const double sx = coord(x, w, size);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = sx - static_cast<double>(x0);
      out[y * size + x] = (1 - ty) * ((1 - tx) * grid[y0 * w + x0] + tx * grid[y0 * w + x1]) +
                          ty * ((1 - tx) * grid[y1 * w + x0] + tx * grid[y1 * w + x1]);
    }
  }
  return Tensor({size, size}, std::move(out));
}

Heatmap render_heatmap(const Tensor& scores, const Tensor& image, int class_label) {
  if (image.rank() != 3 || image.dim(0) != image.dim(1) || image.dim(2) != 3)
    throw DimensionError("render_heatmap: expected an s x s x 3 image, got " + shape_string(image.shape()));
  const std::size_t side = grid_side(scores.numel());
  const std::size_t s = image.dim(0);
  const Tensor grid({side, side}, std::vector<double>(scores.data().begin(), scores.data().end()));
  Tensor up = upsample_bilinear(grid, s);
  auto v = up.mutable_data();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double mn = *lo, range = *hi - *lo;
  for (double& x : v) x = range > 0.0 ? (x - mn) / range : 0.5;

  Heatmap out;
  out.class_label = class_label;
  out.overlay = {s, s, 3, std::vector<std::uint8_t>(s * s * 3)};
  const auto px = image.data();
  for (std::size_t i = 0; i < s * s; ++i) {
    const double grey = 0.299 * px[i * 3] + 0.587 * px[i * 3 + 1] + 0.114 * px[i * 3 + 2];
    const auto colour = jet(v[i]);
    for (std::size_t c = 0; c < 3; ++c)
      out.overlay.pixels[i * 3 + c] = static_cast<std::uint8_t>(quantize_unit(0.5 * colour[c] + 0.5 * grey) * 255.0 + 0.5);
  }
  out.values = std::move(up);
  return out;
}

Heatmap render_heatmap(const Tensor& scores, const Tensor& image, const std::filesystem::path& ppm_path,
                       int class_label) {
  Heatmap h = render_heatmap(scores, image, class_label);
  write_ppm(ppm_path, h.overlay);
  return h;
}

}  // namespace transfer
