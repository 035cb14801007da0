#include "transfer/model.hpp"

#include <string>

#include "transfer/errors.hpp"
#include "transfer/ops.hpp"

namespace transfer {

void ModelConfig::validate() const {
  stem.validate();
  if (use_local_cnns && branches == 0) throw ConfigError("model: B must be at least 1");
  if (local_drop.p < 0.0 || local_drop.p > 1.0) throw ConfigError("model: p1 outside [0, 1]");
  if (p2 < 0.0 || p2 > 1.0) throw ConfigError("model: p2 outside [0, 1]");
  projection().validate();
}

ProjectionConfig ModelConfig::projection() const {
  ProjectionConfig p;
  p.in_channels = stem.output_channels();
  p.grid = stem.output_size();
  p.d = d;
  p.heads = heads;
  p.blocks = blocks;
  p.mlp_hidden = mlp_hidden;
  p.num_classes = num_classes;
  return p;
}

TransferModel::TransferModel(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  Rng rng(init_seed);
  stem_ = std::make_unique<Stem>(config_.stem, rng, params_);
  if (config_.use_local_cnns)
    for (std::size_t b = 0; b < config_.branches; ++b)
      branches_.push_back(LANetBranch::create(config_.stem.output_channels(), config_.reduction, rng, params_,
                                              "local.branch" + std::to_string(b)));
  encoder_ = EncoderParams::create(config_.projection(), rng, params_);
}

Tensor TransferModel::forward(const Tensor& images, Mode mode, Rng& drop_rng, ForwardTrace* trace) const {
  // Pixels arrive in [0, 1]; the network sees them centred on zero.
  Tensor x = stem_->forward(add(scale(images, 2.0), Tensor({3}, -1.0)));
  if (config_.use_local_cnns) {
    auto local = local_cnns_forward(x, branches_, config_.local_drop, mode, drop_rng);
    x = local.features;
    if (trace) {
      trace->branch_maps = std::move(local.maps);
      trace->aggregated = local.aggregated;
      trace->local_decisions = std::move(local.decisions);
    }
  }
  Tensor seq = project_to_sequence(x, encoder_.projection);
  for (const auto& block : encoder_.blocks) {
    auto r = encoder_block(seq, block, config_.heads, config_.p2, mode, drop_rng);
    seq = r.output;
    if (trace) {
      trace->attention.push_back(std::move(r.attention));
      trace->head_decisions.push_back(std::move(r.decisions));
    }
  }
  return classify_head(layer_norm(seq, encoder_.norm_g, encoder_.norm_b), encoder_.head);
}

}  // namespace transfer
