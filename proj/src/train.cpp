#include "transfer/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "transfer/ops.hpp"
#include "transfer/optim.hpp"

namespace transfer {
namespace {

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError("config: " + key + "=" + value + " is not " + what);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc{} || r.ptr != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v, "a number");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(parse_size(key, trim(item)));
  return out;
}

std::string join(std::span<const std::size_t> xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
  return s;
}

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

DivergenceError::DivergenceError(std::size_t step, std::size_t epoch, double loss)
    : std::runtime_error("training diverged: loss " + format_double(loss) + " at step " + std::to_string(step) +
                         " (epoch " + std::to_string(epoch) + ")"),
      step_(step) {}

const char* regularizer_name(RegularizerKind kind) {
  switch (kind) {
    case RegularizerKind::kMad: return "mad";
    case RegularizerKind::kDropout: return "dropout";
    case RegularizerKind::kDropBlock: return "dropblock";
    case RegularizerKind::kSpatialDropout: return "spatial";
  }
  return "?";
}

RegularizerKind parse_regularizer(const std::string& name) {
  for (auto k : {RegularizerKind::kMad, RegularizerKind::kDropout, RegularizerKind::kDropBlock,
                 RegularizerKind::kSpatialDropout})
    if (name == regularizer_name(k)) return k;
  throw ConfigError("config: regularizer_kind=" + name + " is not one of mad, dropout, dropblock, spatial");
}

void TrainConfig::set(const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key), v = trim(raw_value);
  if (key == "image_size") image_size = parse_size(key, v);
  else if (key == "stem_channels") {
    const auto xs = parse_list(key, v);
    if (xs.size() != 4) bad_value(key, v, "a list of four channel counts");
    std::copy(xs.begin(), xs.end(), stem_channels.begin());
  }
  else if (key == "blocks_per_stage") blocks_per_stage = parse_size(key, v);
  else if (key == "stage") stage = parse_size(key, v);
  else if (key == "local_cnns") local_cnns = parse_bool(key, v);
  else if (key == "B") branches = parse_size(key, v);
  else if (key == "reduction") reduction = parse_size(key, v);
  else if (key == "d") d = parse_size(key, v);
  else if (key == "k") heads = parse_size(key, v);
  else if (key == "M") blocks = parse_size(key, v);
  else if (key == "mlp_hidden") mlp_hidden = parse_size(key, v);
  else if (key == "num_classes") num_classes = parse_size(key, v);
  else if (key == "regularizer_kind") regularizer = parse_regularizer(v);
  else if (key == "p1") p1 = parse_double(key, v);
  else if (key == "p2") p2 = parse_double(key, v);
  else if (key == "drop_block_size") drop_block_size = parse_size(key, v);
  else if (key == "lr") lr = parse_double(key, v);
  else if (key == "momentum") momentum = parse_double(key, v);
  else if (key == "batch_size") batch_size = parse_size(key, v);
  else if (key == "epochs") epochs = parse_size(key, v);
  else if (key == "lr_decay_epochs") lr_decay_epochs = parse_list(key, v);
  else if (key == "grad_clip") grad_clip = parse_double(key, v);
  else if (key == "lr_decay_factor") lr_decay_factor = parse_double(key, v);
  else if (key == "seed") seed = parse_u64(key, v);
  else if (key == "data_seed") data_seed = parse_u64(key, v);
  else if (key == "train_per_class") train_per_class = parse_size(key, v);
  else if (key == "test_per_class") test_per_class = parse_size(key, v);
  else if (key == "augment") augment = parse_bool(key, v);
  else if (key == "erase_probability") erase_probability = parse_double(key, v);
  else if (key == "upsample") upsample = parse_bool(key, v);
  else throw UnknownKeyError("config: unknown key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> TrainConfig::entries() const {
  const auto u = [](std::size_t x) { return std::to_string(x); };
  const auto b = [](bool x) { return std::string(x ? "1" : "0"); };
  return {{"image_size", u(image_size)},
          {"stem_channels", join(stem_channels)},
          {"blocks_per_stage", u(blocks_per_stage)},
          {"stage", u(stage)},
          {"local_cnns", b(local_cnns)},
          {"B", u(branches)},
          {"reduction", u(reduction)},
          {"d", u(d)},
          {"k", u(heads)},
          {"M", u(blocks)},
          {"mlp_hidden", u(mlp_hidden)},
          {"num_classes", u(num_classes)},
          {"regularizer_kind", regularizer_name(regularizer)},
          {"p1", format_double(p1)},
          {"p2", format_double(p2)},
          {"drop_block_size", u(drop_block_size)},
          {"lr", format_double(lr)},
          {"momentum", format_double(momentum)},
          {"batch_size", u(batch_size)},
          {"epochs", u(epochs)},
          {"lr_decay_epochs", join(lr_decay_epochs)},
          {"lr_decay_factor", format_double(lr_decay_factor)},
          {"grad_clip", format_double(grad_clip)},
          {"seed", std::to_string(seed)},
          {"data_seed", std::to_string(data_seed)},
          {"train_per_class", u(train_per_class)},
          {"test_per_class", u(test_per_class)},
          {"augment", b(augment)},
          {"erase_probability", format_double(erase_probability)},
          {"upsample", b(upsample)}};
}

void TrainConfig::validate() const {
  const auto prob = [](const char* name, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("config: ") + name + " must lie in [0, 1]");
  };
  prob("p1", p1);
  prob("p2", p2);
  prob("erase_probability", erase_probability);
  if (regularizer != RegularizerKind::kMad && p1 >= 1.0)
    throw ConfigError("config: p1 must be below 1 for dropout-style regularizers");
  if (!(lr >= 0.0)) throw ConfigError("config: lr must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("config: momentum must lie in [0, 1)");
  if (!(grad_clip >= 0.0)) throw ConfigError("config: grad_clip must be non-negative (0 disables)");
  if (!(lr_decay_factor > 0.0)) throw ConfigError("config: lr_decay_factor must be positive");
  if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
  model_config().validate();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.stem.input_size = image_size;
  m.stem.stage_channels = stem_channels;
  m.stem.blocks_per_stage = blocks_per_stage;
  m.stem.output_stage = stage;
  m.use_local_cnns = local_cnns;
  m.branches = branches;
  m.reduction = reduction;
  m.local_drop = {regularizer, p1, drop_block_size};
  m.p2 = p2;
  m.d = d;
  m.heads = heads;
  m.blocks = blocks;
  m.mlp_hidden = mlp_hidden;
  m.num_classes = num_classes;
  return m;
}

AugmentConfig TrainConfig::augment_config() const {
  AugmentConfig a;
  a.erase_probability = erase_probability;
  return a;
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double out = lr;
  for (std::size_t e : lr_decay_epochs)
    if (epoch > e) out /= lr_decay_factor;
  return out;
}

TrainConfig parse_train_config(std::istream& is, TrainConfig base) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value, got '" + trim(line) + "'");
    base.set(line.substr(0, eq), line.substr(eq + 1));
  }
  return base;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file " + path.string());
  return parse_train_config(is, std::move(base));
}

void write_train_config(std::ostream& os, const TrainConfig& config) {
  for (const auto& [k, v] : config.entries()) os << k << '=' << v << '\n';
}

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels, std::size_t num_classes) {
  if (predictions.size() != labels.size()) throw DimensionError("metrics: prediction and label counts differ");
  std::vector<std::size_t> total(num_classes, 0), correct(num_classes, 0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw std::out_of_range("metrics: label " + std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(num_classes) + ")");
    const auto c = static_cast<std::size_t>(labels[i]);
    ++total[c];
    if (predictions[i] == labels[i]) {
      ++correct[c];
      ++hits;
    }
  }
  Metrics m;
  m.overall_accuracy = labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size());
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (total[c] == 0) {
      std::clog << "warning: class " << c << " absent from evaluation data; excluded from mean class accuracy\n";
      m.per_class_accuracy.emplace_back(std::nullopt);
      continue;
    }
    const double acc = static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    m.per_class_accuracy.emplace_back(acc);
    sum += acc;
    ++present;
  }
  m.mean_class_accuracy = present ? sum / static_cast<double>(present) : 0.0;
  return m;
}

void write_metrics_header(std::ostream& os) { os << "epoch,lr,train_loss,train_acc,test_acc,mean_class_acc\n"; }

void write_metrics_row(std::ostream& os, const EpochRecord& r) {
  os << r.epoch << ',' << format_double(r.lr) << ',' << format_double(r.train_loss) << ','
     << format_double(r.train_accuracy) << ',' << format_double(r.test_accuracy) << ','
     << format_double(r.mean_class_accuracy) << '\n';
}

std::vector<int> predict(const TransferModel& model, const Dataset& data, std::size_t batch_size) {
  NoGradGuard no_grad;
  Rng unused(0);
  std::vector<int> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.resize(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = model.forward(stack_images(data, idx), Mode::kInference, unused);
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i)
      out.push_back(static_cast<int>(argmax_row(logits.data().subspan(i * c, c))));
  }
  return out;
}

Metrics evaluate(const TransferModel& model, const Dataset& data, std::size_t batch_size) {
  const auto preds = predict(model, data, batch_size);
  return compute_metrics(preds, data.labels(), model.config().num_classes);
}

Checkpoint make_checkpoint(const TrainConfig& config, const TransferModel& model) {
  Checkpoint ckpt;
  ckpt.config = config.entries();
  model.parameters().append_to(ckpt);
  return ckpt;
}

TrainConfig config_from_checkpoint(const Checkpoint& ckpt) {
  TrainConfig c;
  for (const auto& [k, v] : ckpt.config) c.set(k, v);
  c.validate();
  return c;
}

std::unique_ptr<TransferModel> model_from_checkpoint(const Checkpoint& ckpt) {
  const TrainConfig c = config_from_checkpoint(ckpt);
  auto model = std::make_unique<TransferModel>(c.model_config(), 0);
  model->parameters().load(ckpt);
  return model;
}

std::pair<Dataset, Dataset> synthetic_splits(const TrainConfig& config) {
  Rng root(config.data_seed);
  const std::uint64_t train_seed = root.next_u64();
  const std::uint64_t test_seed = root.next_u64();
  return {generate_synthetic_dataset(config.num_classes, config.train_per_class, config.image_size, train_seed,
                                     Split::kTrain),
          generate_synthetic_dataset(config.num_classes, config.test_per_class, config.image_size, test_seed,
                                     Split::kTest)};
}

TrainResult train(const TrainConfig& config, const Dataset& train_data, const Dataset& test_data,
                  const TrainOptions& options) {
  config.validate();
  train_data.validate();
  if (train_data.image_size != config.image_size)
    throw ConfigError("training images are " + std::to_string(train_data.image_size) + " pixels, config expects " +
                      std::to_string(config.image_size));
  if (train_data.num_classes() != config.num_classes)
    throw ConfigError("training data has " + std::to_string(train_data.num_classes()) + " classes, config expects " +
                      std::to_string(config.num_classes));
  if (train_data.size() == 0) throw DataError("training set is empty");

  Rng root(config.seed);
  const std::uint64_t init_seed = root.split(0).next_u64();
  Rng data_rng = root.split(1);
  Rng drop_rng = root.split(2);

  TrainResult result;
  result.model = std::make_unique<TransferModel>(config.model_config(), init_seed);
  TransferModel& model = *result.model;
  std::vector<Tensor> params = model.parameters().tensors();
  std::vector<Tensor> velocities;
  for (const auto& p : params) velocities.emplace_back(p.shape(), 0.0);

  const Dataset data = config.upsample ? upsample_balance(train_data, data_rng) : train_data;
  const AugmentConfig aug = config.augment_config();
  const std::size_t s = config.image_size;
  const std::size_t per_image = s * s * 3;

  std::ofstream metrics_os;
  if (options.metrics_csv) {
    metrics_os.open(*options.metrics_csv);
    if (!metrics_os) throw DataError("cannot write " + options.metrics_csv->string());
    write_metrics_header(metrics_os);
  }
  std::vector<DropLogRow> drop_rows;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = config.lr_at(epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[data_rng.index(i)]);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      std::vector<double> pixels(n * per_image);
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        const Sample& sample = data.samples[order[start + i]];
        const Tensor img = config.augment ? augment(sample.image, aug, data_rng) : sample.image;
        std::copy(img.data().begin(), img.data().end(), pixels.begin() + static_cast<std::ptrdiff_t>(i * per_image));
        labels[i] = sample.label;
      }
      const Tensor images({n, s, s, 3}, std::move(pixels));

      ForwardTrace trace;
      const Tensor logits = model.forward(images, Mode::kTraining, drop_rng, options.drop_log ? &trace : nullptr);
      const Tensor loss = cross_entropy(logits, labels);
      const double value = loss.item();
      ++step;
      if (!std::isfinite(value)) throw DivergenceError(step, epoch, value);
      backward(loss);
      clip_grad_norm(params, config.grad_clip);
      sgd_momentum_step(params, velocities, lr, config.momentum);

      result.step_losses.push_back(value);
      loss_sum += value * static_cast<double>(n);
      const std::size_t c = logits.dim(1);
      for (std::size_t i = 0; i < n; ++i)
        if (static_cast<int>(argmax_row(logits.data().subspan(i * c, c))) == labels[i]) ++correct;
      if (options.drop_log) {
        for (const auto& d : trace.local_decisions) drop_rows.push_back({step, "local", d.dropped_index});
        for (std::size_t b = 0; b < trace.head_decisions.size(); ++b)
          for (const auto& d : trace.head_decisions[b])
            drop_rows.push_back({step, "block" + std::to_string(b), d.dropped_index});
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    if (options.evaluate_each_epoch && test_data.size() > 0) {
      const Metrics m = evaluate(model, test_data);
      rec.test_accuracy = m.overall_accuracy;
      rec.mean_class_accuracy = m.mean_class_accuracy;
    }
    result.history.push_back(rec);
    if (metrics_os.is_open()) {
      write_metrics_row(metrics_os, rec);
      metrics_os.flush();
    }
    if (options.on_epoch) options.on_epoch(rec);
  }

  if (options.checkpoint) save_checkpoint(*options.checkpoint, make_checkpoint(config, model));
  if (options.drop_log) {
    std::ofstream os(*options.drop_log);
    if (!os) throw DataError("cannot write " + options.drop_log->string());
    write_drop_log(os, drop_rows);
  }
  return result;
}

Metrics nearest_centroid_metrics(const Dataset& train_data, const Dataset& test_data) {
  const std::size_t classes = train_data.num_classes();
  const std::size_t dim = train_data.image_size * train_data.image_size * 3;
  std::vector<double> centroids(classes * dim, 0.0);
  const auto counts = train_data.class_counts();
  for (const auto& s : train_data.samples) {
    double* c = centroids.data() + static_cast<std::size_t>(s.label) * dim;
    const auto px = s.image.data();
    for (std::size_t i = 0; i < dim; ++i) c[i] += px[i];
  }
  for (std::size_t k = 0; k < classes; ++k)
    for (std::size_t i = 0; i < dim; ++i)
      centroids[k * dim + i] /= static_cast<double>(std::max<std::size_t>(counts[k], 1));

  std::vector<int> preds;
  preds.reserve(test_data.size());
  for (const auto& s : test_data.samples) {
    const auto px = s.image.data();
    double best = INFINITY;
    int arg = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      double dist = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double diff = px[i] - centroids[k * dim + i];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        arg = static_cast<int>(k);
      }
    }
    preds.push_back(arg);
  }
  return compute_metrics(preds, test_data.labels(), classes);
}

}  // namespace transfer
