#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "transfer/encoder.hpp"
#include "transfer/local_cnns.hpp"
#include "transfer/params.hpp"
#include "transfer/stem.hpp"

namespace transfer {

/// Architecture plus the drop rates that act inside the forward pass.
struct ModelConfig {
  StemConfig stem;
  bool use_local_cnns = true;
  std::size_t branches = 2;   // B
  std::size_t reduction = 4;  // r
  DropSite local_drop{RegularizerKind::kMad, 0.6, 3};
  double p2 = 0.3;
  std::size_t d = 128;
  std::size_t heads = 8;
  std::size_t blocks = 4;
  std::size_t mlp_hidden = 256;
  std::size_t num_classes = 7;

  void validate() const;
  ProjectionConfig projection() const;
};

/// Everything a forward pass decided or produced besides the logits.
struct ForwardTrace {
  std::vector<Tensor> branch_maps;                   // [n x h x w x 1] each, pre-drop
  Tensor aggregated;                                 // M_out, undefined without local CNNs
  std::vector<DropDecision> local_decisions;         // per sample
  std::vector<std::vector<DropDecision>> head_decisions;  // [block][sample]
  std::vector<Tensor> attention;                     // [block] -> [n x heads x N x N]
};

class TransferModel {
 public:
  TransferModel(const ModelConfig& config, std::uint64_t init_seed);

  TransferModel(const TransferModel&) = delete;
  TransferModel& operator=(const TransferModel&) = delete;

  /// images [n x s x s x 3] in [0, 1] -> logits [n x num_classes].
  Tensor forward(const Tensor& images, Mode mode, Rng& drop_rng, ForwardTrace* trace = nullptr) const;

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const Stem& stem() const { return *stem_; }
  const std::vector<LANetBranch>& branches() const { return branches_; }
  const EncoderParams& encoder() const { return encoder_; }

 private:
  ModelConfig config_;
  ParameterSet params_;
  std::unique_ptr<Stem> stem_;
  std::vector<LANetBranch> branches_;
  EncoderParams encoder_;
};

}  // namespace transfer
