#include "transfer/stem.hpp"

#include <string>

#include "transfer/errors.hpp"
#include "transfer/ops.hpp"

namespace transfer {

void StemConfig::validate() const {
  if (output_stage < 2 || output_stage > 4)
    throw ConfigError("stem: output_stage must be 2, 3 or 4, got " + std::to_string(output_stage));
  const std::size_t factor = std::size_t{1} << output_stage;
  if (input_size == 0 || input_size % factor != 0)
    throw ConfigError("stem: input size " + std::to_string(input_size) + " not divisible by " +
                      std::to_string(factor) + " (2^output_stage)");
  for (std::size_t c : stage_channels)
    if (c == 0) throw ConfigError("stem: stage channel count must be positive");
}

Stem::Stem(const StemConfig& config, Rng& init_rng, ParameterSet& params) : config_(config) {
  config_.validate();
  std::size_t width = 3;
  for (std::size_t s = 1; s <= config_.output_stage; ++s) {
    StemStage stage;
    const std::string prefix = "stem.stage" + std::to_string(s);
    for (std::size_t b = 0; b < config_.blocks_per_stage; ++b) {
      const std::string bp = prefix + ".block" + std::to_string(b);
      ResidualBlock blk;
      blk.conv1_w = params.add(bp + ".conv1.weight", init::he_normal({3, 3, width, width}, 9 * width, init_rng));
      blk.conv1_b = params.add(bp + ".conv1.bias", init::zeros({width}));
      blk.conv2_w = params.add(bp + ".conv2.weight", init::zeros({3, 3, width, width}));
      blk.conv2_b = params.add(bp + ".conv2.bias", init::zeros({width}));
      stage.blocks.push_back(std::move(blk));
    }
    const std::size_t out = config_.stage_channels[s - 1];
    stage.down_w = params.add(prefix + ".down.weight", init::he_normal({3, 3, width, out}, 9 * width, init_rng));
    stage.down_b = params.add(prefix + ".down.bias", init::zeros({out}));
    stages_.push_back(std::move(stage));
    width = out;
  }
}

Tensor residual_block_forward(const Tensor& x, const ResidualBlock& block) {
  const Tensor h = relu(conv2d(x, block.conv1_w, 1, 1, block.conv1_b));
  return add(x, conv2d(h, block.conv2_w, 1, 1, block.conv2_b));
}

Tensor Stem::forward(const Tensor& images) const {
  const bool batched = images.rank() == 4;
  const std::size_t off = batched ? 1 : 0;
  if ((!batched && images.rank() != 3) || images.dim(off) != config_.input_size ||
      images.dim(off + 1) != config_.input_size || images.dim(off + 2) != 3)
    throw DimensionError("stem: expected " + std::to_string(config_.input_size) + "x" +
                         std::to_string(config_.input_size) + "x3 images, got " + shape_string(images.shape()));
  Tensor x = images;
  for (const auto& stage : stages_) {
    for (const auto& blk : stage.blocks) x = residual_block_forward(x, blk);
    x = relu(conv2d(x, stage.down_w, 2, 1, stage.down_b));
  }
  return x;
}

}  // namespace transfer
