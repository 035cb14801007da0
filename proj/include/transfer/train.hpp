#pragma once

// Training configuration, the SGD training loop and evaluation metrics.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "transfer/augment.hpp"
#include "transfer/dataset.hpp"
#include "transfer/errors.hpp"
#include "transfer/model.hpp"
#include "transfer/serialize.hpp"

namespace transfer {

/// A config key that no TrainConfig field accepts.
class UnknownKeyError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Loss became non-finite; the message names the optimizer step.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, std::size_t epoch, double loss);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct TrainConfig {
  // Architecture.
  std::size_t image_size = 48;
  std::array<std::size_t, 4> stem_channels{16, 32, 64, 128};
  std::size_t blocks_per_stage = 2;
  std::size_t stage = 3;
  bool local_cnns = true;
  std::size_t branches = 2;  // key "B"
  std::size_t reduction = 4;
  std::size_t d = 128;
  std::size_t heads = 8;   // key "k"
  std::size_t blocks = 4;  // key "M"
  std::size_t mlp_hidden = 256;
  std::size_t num_classes = 7;
  // Regularisation.
  RegularizerKind regularizer = RegularizerKind::kMad;  // key "regularizer_kind"
  double p1 = 0.6;
  double p2 = 0.3;
  std::size_t drop_block_size = 3;
  // Optimisation.
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::vector<std::size_t> lr_decay_epochs{12, 24};
  double lr_decay_factor = 10.0;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  std::uint64_t seed = 0;
  // Data.
  std::uint64_t data_seed = 7;  // synthetic split generation only
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  bool augment = true;
  double erase_probability = 0.5;
  bool upsample = true;

  /// Applies one `key=value` override. Throws UnknownKeyError for an
  /// unrecognised key and ConfigError for an unparsable value.
  void set(const std::string& key, const std::string& value);
  /// Every key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  /// Throws ConfigError when an invariant fails.
  void validate() const;

  ModelConfig model_config() const;
  AugmentConfig augment_config() const;
  /// lr divided by decay_factor once per decay epoch already passed;
  /// `epoch` counts from 1.
  double lr_at(std::size_t epoch) const;
};

/// Parses flat `key = value` text; '#' starts a comment.
TrainConfig parse_train_config(std::istream& is, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
void write_train_config(std::ostream& os, const TrainConfig& config);

const char* regularizer_name(RegularizerKind kind);
RegularizerKind parse_regularizer(const std::string& name);

struct Metrics {
  double overall_accuracy = 0.0;
  double mean_class_accuracy = 0.0;
  std::vector<std::optional<double>> per_class_accuracy;  // nullopt: class absent
  std::vector<double> loss_curve;
};

/// Accuracy metrics from predictions. Absent classes are excluded from the
/// mean with a warning on std::clog.
Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels, std::size_t num_classes);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double mean_class_accuracy = 0.0;
};

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const EpochRecord& r);

struct TrainOptions {
  std::optional<std::filesystem::path> metrics_csv;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> drop_log;
  std::function<void(const EpochRecord&)> on_epoch;
  bool evaluate_each_epoch = true;
};

struct TrainResult {
  std::unique_ptr<TransferModel> model;
  std::vector<EpochRecord> history;
  std::vector<double> step_losses;
};

/// Seeds are derived from config.seed: parameter init, data order and
/// augmentation, and drop decisions each get their own stream.
TrainResult train(const TrainConfig& config, const Dataset& train_data, const Dataset& test_data,
                  const TrainOptions& options = {});

/// Class predictions in inference mode, batched.
std::vector<int> predict(const TransferModel& model, const Dataset& data, std::size_t batch_size = 64);
Metrics evaluate(const TransferModel& model, const Dataset& data, std::size_t batch_size = 64);

Checkpoint make_checkpoint(const TrainConfig& config, const TransferModel& model);
TrainConfig config_from_checkpoint(const Checkpoint& ckpt);
std::unique_ptr<TransferModel> model_from_checkpoint(const Checkpoint& ckpt);

/// Raw-pixel nearest-centroid classifier accuracy.
Metrics nearest_centroid_metrics(const Dataset& train_data, const Dataset& test_data);

/// The synthetic train/test pair a config describes (distinct derived seeds).
std::pair<Dataset, Dataset> synthetic_splits(const TrainConfig& config);

}  // namespace transfer
