#pragma once

// Attention rollout through the encoder and heatmap rendering over the
// input image.

#include <array>
#include <filesystem>
#include <span>
#include <string>

#include "transfer/image.hpp"
#include "transfer/tensor.hpp"

namespace transfer {

enum class HeadReduce { kMean, kMax, kMin };
HeadReduce parse_head_reduce(const std::string& name);

/// [heads x N x N] (or [1 x heads x N x N]) -> [N x N]. Max and min are
/// renormalised per row so the result stays row-stochastic.
Tensor reduce_heads(const Tensor& attention, HeadReduce how);

/// Rollout of per-block row-stochastic [N x N] matrices: the product over
/// blocks of rownorm(A + I), read at the class-token row (token 0)
/// restricted to the N-1 patch tokens and renormalised. When the class
/// token keeps no mass on any patch the result is uniform.
/// Throws ContractError if some input row does not sum to 1 within 1e-6 or
/// has a negative entry.
Tensor attention_rollout(std::span<const Tensor> per_block);

/// Elementwise product of patch scores with a grid map (e.g. the local-CNN
/// aggregate), renormalised to sum 1; uniform if the product vanishes.
Tensor combine_with_map(const Tensor& scores, const Tensor& grid_map);

struct Heatmap {
  Tensor values;  // [s x s] in [0, 1]
  Raster overlay; // s x s RGB
  int class_label = -1;
};

/// Jet-style colormap on [0, 1].
std::array<double, 3> jet(double v);

/// Reshapes `scores` (h*w entries) to the grid, bilinearly upsamples to the
/// image size, min-max normalises (constant -> 0.5), colours with `jet` and
/// blends at alpha 0.5 over the grayscale of `image` [s x s x 3].
Heatmap render_heatmap(const Tensor& scores, const Tensor& image, int class_label = -1);

/// render_heatmap followed by writing the overlay as a P6 file.
Heatmap render_heatmap(const Tensor& scores, const Tensor& image, const std::filesystem::path& ppm_path,
                       int class_label = -1);

/// Bilinear resize of a [h x w] map to [size x size] (pixel-centre aligned).
Tensor upsample_bilinear(const Tensor& grid, std::size_t size);

}  // namespace transfer
