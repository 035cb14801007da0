#pragma once

#include <span>
#include <vector>

#include "transfer/params.hpp"
#include "transfer/regularizers.hpp"
#include "transfer/tensor.hpp"

namespace transfer {

/// Two 1x1 convolutions (c -> c/r -> 1) with ReLU then Sigmoid.
struct LANetBranch {
  Tensor conv1_w, conv1_b, conv2_w, conv2_b;
  std::size_t channels = 0;
  std::size_t reduction = 4;

  static LANetBranch create(std::size_t channels, std::size_t reduction, Rng& init_rng,
                            ParameterSet& params, const std::string& prefix);
};

/// Single-channel spatial attention map in (0, 1).
Tensor lanet_forward(const Tensor& x, const LANetBranch& branch);

/// Elementwise max over attention maps.
Tensor aggregate_max(std::span<const Tensor> maps);

/// What replaces MAD at the drop site in the regularizer comparison.
enum class RegularizerKind { kMad, kDropout, kDropBlock, kSpatialDropout };

struct DropSite {
  RegularizerKind kind = RegularizerKind::kMad;
  double p = 0.0;
  std::size_t block_size = 3;  // drop_block only
};

struct LocalCnnsOutput {
  Tensor features;               // x * M_out
  std::vector<Tensor> maps;      // per-branch maps before dropping
  Tensor aggregated;             // M_out
  std::vector<DropDecision> decisions;  // one per sample (MAD only)
};

/// Maps -> drop site -> max aggregation -> reweighting of `x`.
/// Input is [h x w x c] or [n x h x w x c].
LocalCnnsOutput local_cnns_forward(const Tensor& x, std::span<const LANetBranch> branches,
                                   const DropSite& site, Mode mode, Rng& rng);

/// MAD-only convenience form.
LocalCnnsOutput local_cnns_forward(const Tensor& x, std::span<const LANetBranch> branches, double p1,
                                   Mode mode, Rng& rng);

}  // namespace transfer
