#include "transfer/local_cnns.hpp"

#include <atomic>
#include <iostream>
#include <string>

#include "transfer/errors.hpp"
#include "transfer/ops.hpp"

namespace transfer {
namespace {

void warn_degenerate_once() {
  static std::atomic<bool> warned{false};
  if (!warned.exchange(true))
    std::clog << "warning: single LANet branch dropped; aggregated attention map is all zero\n";
}

}  // namespace

LANetBranch LANetBranch::create(std::size_t channels, std::size_t reduction, Rng& init_rng,
                                ParameterSet& params, const std::string& prefix) {
  if (reduction == 0 || channels % reduction != 0)
    throw ConfigError("LANet: channel count " + std::to_string(channels) +
                      " not divisible by reduction ratio " + std::to_string(reduction));
  const std::size_t hidden = channels / reduction;
  LANetBranch b;
  b.channels = channels;
  b.reduction = reduction;
  b.conv1_w = params.add(prefix + ".conv1.weight", init::he_normal({1, 1, channels, hidden}, channels, init_rng));
  b.conv1_b = params.add(prefix + ".conv1.bias", init::zeros({hidden}));
  b.conv2_w = params.add(prefix + ".conv2.weight", init::he_normal({1, 1, hidden, 1}, hidden, init_rng));
  b.conv2_b = params.add(prefix + ".conv2.bias", init::zeros({1}));
  return b;
}

Tensor lanet_forward(const Tensor& x, const LANetBranch& branch) {
  if (x.rank() < 3 || x.shape().back() != branch.channels)
    throw DimensionError("LANet: input " + shape_string(x.shape()) + " does not have " +
                         std::to_string(branch.channels) + " channels");
  const Tensor h = relu(conv2d(x, branch.conv1_w, 1, 0, branch.conv1_b));
  return sigmoid(conv2d(h, branch.conv2_w, 1, 0, branch.conv2_b));
}

Tensor aggregate_max(std::span<const Tensor> maps) {
  if (maps.empty()) throw UsageError("aggregate_max: empty attention map set");
  if (maps.size() == 1) return maps[0];
  return elementwise_max(maps);
}

LocalCnnsOutput local_cnns_forward(const Tensor& x, std::span<const LANetBranch> branches,
                                   const DropSite& site, Mode mode, Rng& rng) {
  if (branches.empty()) throw UsageError("local CNNs need at least one branch");
  LocalCnnsOutput out;
  out.maps.reserve(branches.size());
  for (const auto& b : branches) out.maps.push_back(lanet_forward(x, b));

  const bool batched = x.rank() == 4;
  std::vector<Tensor> dropped;
  switch (site.kind) {
    case RegularizerKind::kMad: {
      if (batched) {
        auto r = mad_drop_per_sample(out.maps, site.p, mode, rng);
        dropped = std::move(r.group);
        out.decisions = std::move(r.decisions);
      } else {
        auto r = mad_drop(out.maps, site.p, mode, rng);
        dropped = std::move(r.group);
        out.decisions.push_back(r.decision);
      }
      if (branches.size() == 1)
        for (const auto& d : out.decisions)
          if (d.dropped_index) warn_degenerate_once();
      break;
    }
    case RegularizerKind::kDropout:
    case RegularizerKind::kDropBlock:
    case RegularizerKind::kSpatialDropout: {
      // The maps form the channels of one [.. x h x w x B] tensor here.
      Shape channels_last = out.maps[0].shape();
      channels_last.back() = branches.size();
      const Tensor s = reshape(stack(out.maps, -1), channels_last);
      Tensor reg;
      if (site.kind == RegularizerKind::kDropout)
        reg = dropout(s, site.p, mode, rng);
      else if (site.kind == RegularizerKind::kDropBlock)
        reg = drop_block(s, site.p, site.block_size, mode, rng);
      else
        reg = spatial_dropout(s, site.p, mode, rng);
      for (std::size_t b = 0; b < branches.size(); ++b) {
        Shape one = reg.shape();
        one.back() = 1;
        dropped.push_back(reshape(select(reg, -1, b), one));
      }
      break;
    }
  }
  out.aggregated = aggregate_max(dropped);
  out.features = mul(x, out.aggregated);
  return out;
}

LocalCnnsOutput local_cnns_forward(const Tensor& x, std::span<const LANetBranch> branches, double p1,
                                   Mode mode, Rng& rng) {
  return local_cnns_forward(x, branches, DropSite{RegularizerKind::kMad, p1, 3}, mode, rng);
}

}  // namespace transfer
