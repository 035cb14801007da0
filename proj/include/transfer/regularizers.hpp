#pragma once

// Multi-attention dropping and the three element/channel/block dropout
// baselines it is compared against. All of them are the identity in
// inference mode and consume no randomness there.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "transfer/rng.hpp"
#include "transfer/tensor.hpp"

namespace transfer {

enum class Mode { kTraining, kInference };

/// Which member of a group (if any) one drop application zeroed.
struct DropDecision {
  std::optional<std::size_t> dropped_index;
  std::size_t group_size = 0;
  double probability = 0.0;
  std::uint64_t rng_token = 0;  // generator position before the draw

  bool operator==(const DropDecision&) const = default;
};

/// Draws one decision: with probability p a member chosen uniformly from
/// [0, group_size) is marked for dropping.
DropDecision draw_drop(std::size_t group_size, double p, Mode mode, Rng& rng);

struct MadResult {
  std::vector<Tensor> group;
  DropDecision decision;
};

/// Zeroes at most one whole member of `group`, with probability p. Untouched
/// members are returned as-is (no rescaling in either mode); the dropped one
/// is multiplied by zero in the recorded graph so its gradient is zero too.
MadResult mad_drop(std::span<const Tensor> group, double p, Mode mode, Rng& rng);

struct BatchedMadResult {
  std::vector<Tensor> group;
  std::vector<DropDecision> decisions;  // one per sample
};

/// Per-sample variant: every member has a leading batch axis of size n and
/// each sample gets an independent decision.
BatchedMadResult mad_drop_per_sample(std::span<const Tensor> group, double p, Mode mode, Rng& rng);

/// Standard inverted dropout; p in [0, 1).
Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng);

/// DropBlock over [h x w x c] or [n x h x w x c]. Seeds fire independently at
/// every spatial position of every channel with rate
///   gamma = p * h * w / (block^2 * (h - block + 1) * (w - block + 1))
/// and zero a block x block square centred on the seed, clipped at the
/// borders. Survivors are scaled by total / kept per sample.
Tensor drop_block(const Tensor& x, double p, std::size_t block_size, Mode mode, Rng& rng);

double drop_block_gamma(double p, std::size_t h, std::size_t w, std::size_t block_size);

/// Zeroes whole channels of [h x w x c] or [n x h x w x c]; p in [0, 1).
Tensor spatial_dropout(const Tensor& x, double p, Mode mode, Rng& rng);

struct DropLogRow {
  std::size_t step = 0;
  std::string site;
  std::optional<std::size_t> dropped_index;
};

/// CSV with header `step,site,dropped_index`; no drop is written as "none".
void write_drop_log(std::ostream& os, std::span<const DropLogRow> rows);

}  // namespace transfer
