#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "transfer/params.hpp"
#include "transfer/tensor.hpp"

namespace transfer {

/// Reduced residual backbone. Stage i runs `blocks_per_stage` residual blocks
/// at the incoming width, then a stride-2 3x3 conv + ReLU to
/// stage_channels[i-1]. The output is tapped after `output_stage`.
struct StemConfig {
  std::size_t input_size = 48;
  std::array<std::size_t, 4> stage_channels{16, 32, 64, 128};
  std::size_t blocks_per_stage = 2;
  std::size_t output_stage = 3;

  /// Throws ConfigError on an unsupported stage or indivisible input size.
  void validate() const;
  std::size_t output_size() const { return input_size >> output_stage; }
  std::size_t output_channels() const { return stage_channels[output_stage - 1]; }
};

struct ResidualBlock {
  Tensor conv1_w, conv1_b, conv2_w, conv2_b;
};

struct StemStage {
  std::vector<ResidualBlock> blocks;
  Tensor down_w, down_b;
};

class Stem {
 public:
  /// Builds stages 1..output_stage and registers them under "stem.".
  Stem(const StemConfig& config, Rng& init_rng, ParameterSet& params);

  const StemConfig& config() const { return config_; }
  std::vector<StemStage>& stages() { return stages_; }

  /// [s x s x 3] or [n x s x s x 3] -> features at the configured tap.
  Tensor forward(const Tensor& images) const;

 private:
  StemConfig config_;
  std::vector<StemStage> stages_;
};

/// x + conv2(relu(conv1(x))), both 3x3 / stride 1 / padding 1.
Tensor residual_block_forward(const Tensor& x, const ResidualBlock& block);

inline Tensor stem_forward(const Tensor& image, const Stem& stem) { return stem.forward(image); }

}  // namespace transfer
