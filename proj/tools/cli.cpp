#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "transfer/kernels.hpp"
#include "transfer/serialize.hpp"
#include "transfer/train.hpp"
#include "transfer/visualizer.hpp"

namespace transfer::cli {
namespace {

namespace fs = std::filesystem;

// Thrown for a bad flag value that CLI11 cannot see, such as an unknown
// config key in --set; maps to the usage exit code.
struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App& cmd, CommonOptions& o, const std::string& default_out) {
  o.out_dir = default_out;
  cmd.add_option("--config", o.config_path, "flat key=value config file")->check(CLI::ExistingFile);
  cmd.add_option("--set", o.overrides, "KEY=VALUE override, applied after --config (repeatable)")
      ->allow_extra_args(false);
  cmd.add_option("--out", o.out_dir, "output directory")->capture_default_str();
  cmd.add_option("--seed", o.seed, "shorthand for --set seed=N");
}

std::pair<std::string, std::string> split_assignment(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageFailure("expected KEY=VALUE, got '" + kv + "'");
  return {kv.substr(0, eq), kv.substr(eq + 1)};
}

TrainConfig apply_overrides(TrainConfig c, const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    const auto [k, v] = split_assignment(kv);
    try {
      c.set(k, v);
    } catch (const UnknownKeyError& e) {
      throw UsageFailure(e.what());
    }
  }
  return c;
}

TrainConfig resolve_config(const CommonOptions& o, const char* seed_key = "seed") {
  TrainConfig c;
  if (!o.config_path.empty()) {
    try {
      c = load_train_config(o.config_path);
    } catch (const UnknownKeyError& e) {
      throw UsageFailure(o.config_path + ": " + e.what());
    }
  }
  c = apply_overrides(std::move(c), o.overrides);
  if (o.seed) c.set(seed_key, std::to_string(*o.seed));
  c.validate();
  return c;
}

void write_config_file(const fs::path& path, const TrainConfig& c) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  write_train_config(os, c);
}

std::pair<Dataset, Dataset> load_splits(const TrainConfig& c, const std::string& data_dir) {
  if (data_dir.empty()) return synthetic_splits(c);
  const fs::path root(data_dir);
  return {load_dataset(root / "train", Split::kTrain), load_dataset(root / "test", Split::kTest)};
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

void print_metrics(std::ostream& out, const Metrics& m, const std::vector<std::string>& class_names) {
  out << "overall_accuracy " << fixed(m.overall_accuracy) << '\n';
  out << "mean_class_accuracy " << fixed(m.mean_class_accuracy) << '\n';
  for (std::size_t c = 0; c < m.per_class_accuracy.size(); ++c) {
    const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
    const auto& acc = m.per_class_accuracy[c];
    out << "class " << name << ' ' << (acc ? fixed(*acc) : std::string("undefined")) << '\n';
  }
}

// --- gen-data ---------------------------------------------------------------

int gen_data(const CommonOptions& o, std::ostream& out) {
  const TrainConfig c = resolve_config(o, "data_seed");
  const fs::path root(o.out_dir);
  const auto [train_set, test_set] = synthetic_splits(c);
  save_dataset(root / "train", train_set);
  save_dataset(root / "test", test_set);
  fs::create_directories(root);
  write_config_file(root / "config.txt", c);
  out << "wrote " << train_set.size() << " train and " << test_set.size() << " test images to " << root.string()
      << '\n';
  return kExitOk;
}

// --- train ------------------------------------------------------------------

int train_cmd(const CommonOptions& o, const std::string& data_dir, std::ostream& out) {
  const TrainConfig c = resolve_config(o);
  const auto [train_set, test_set] = load_splits(c, data_dir);
  const fs::path root(o.out_dir);
  fs::create_directories(root);
  write_config_file(root / "config.txt", c);
  TrainOptions opts;
  opts.metrics_csv = root / "metrics.csv";
  opts.checkpoint = root / "model.ckpt";
  opts.drop_log = root / "drops.csv";
  opts.on_epoch = [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " lr " << r.lr << " loss " << fixed(r.train_loss) << " train_acc "
        << fixed(r.train_accuracy) << " test_acc " << fixed(r.test_accuracy) << std::endl;
  };
  train(c, train_set, test_set, opts);
  out << "wrote " << (root / "model.ckpt").string() << '\n';
  return kExitOk;
}

// --- eval -------------------------------------------------------------------

int eval_cmd(const std::string& checkpoint, const std::string& data_dir, const std::string& split,
             std::ostream& out) {
  if (!fs::exists(checkpoint)) throw DataError("checkpoint not found: " + checkpoint);
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const TrainConfig c = config_from_checkpoint(ckpt);
  const auto model = model_from_checkpoint(ckpt);
  Dataset data;
  if (data_dir.empty()) {
    auto splits = synthetic_splits(c);
    data = split == "train" ? std::move(splits.first) : std::move(splits.second);
  } else {
    data = load_dataset(fs::path(data_dir) / split, split == "train" ? Split::kTrain : Split::kTest);
  }
  print_metrics(out, evaluate(*model, data), data.class_names);
  return kExitOk;
}

// --- sweep ------------------------------------------------------------------

int sweep_cmd(const CommonOptions& o, const std::vector<std::string>& grid_specs, const std::string& data_dir,
              std::ostream& out) {
  if (grid_specs.empty()) throw UsageFailure("sweep needs at least one --grid axis");
  const TrainConfig base = resolve_config(o);
  std::vector<GridAxis> axes;
  for (const auto& spec : grid_specs) {
    axes.push_back(parse_grid_axis(spec));
    TrainConfig probe = base;
    try {
      probe.set(axes.back().key, axes.back().values.front());
    } catch (const UnknownKeyError& e) {
      throw UsageFailure(e.what());
    }
  }
  const auto [train_set, test_set] = load_splits(base, data_dir);
  const fs::path root(o.out_dir);
  fs::create_directories(root);
  std::ofstream csv(root / "sweep.csv");
  if (!csv) throw DataError("cannot write " + (root / "sweep.csv").string());
  for (const auto& a : axes) csv << a.key << ',';
  csv << "test_acc,mean_class_acc,final_train_loss\n";

  std::vector<std::size_t> at(axes.size(), 0);
  for (bool done = false; !done;) {
    TrainConfig c = base;
    std::string label;
    for (std::size_t i = 0; i < axes.size(); ++i) {
      c.set(axes[i].key, axes[i].values[at[i]]);
      label += (i ? " " : "") + axes[i].key + "=" + axes[i].values[at[i]];
    }
    c.validate();
    TrainOptions opts;
    opts.evaluate_each_epoch = false;
    const TrainResult r = train(c, train_set, test_set, opts);
    const Metrics m = evaluate(*r.model, test_set);
    const double final_loss = r.step_losses.empty() ? 0.0 : r.step_losses.back();
    for (std::size_t i = 0; i < axes.size(); ++i) csv << axes[i].values[at[i]] << ',';
    csv << m.overall_accuracy << ',' << m.mean_class_accuracy << ',' << final_loss << '\n';
    csv.flush();
    out << label << " test_acc " << fixed(m.overall_accuracy) << std::endl;

    done = true;
    for (std::size_t i = axes.size(); i-- > 0;) {
      if (++at[i] < axes[i].values.size()) {
        done = false;
        break;
      }
      at[i] = 0;
    }
  }
  out << "wrote " << (root / "sweep.csv").string() << '\n';
  return kExitOk;
}

// --- visualize --------------------------------------------------------------

struct VisualizeOptions {
  std::string checkpoint;
  std::string data_dir;
  std::string out_dir = "viz";
  std::optional<std::size_t> index;
  std::size_t count = 8;
  std::string heads = "mean";
  bool dump_raw = false;
};

int visualize_cmd(const VisualizeOptions& v, std::ostream& out) {
  if (!fs::exists(v.checkpoint)) throw DataError("checkpoint not found: " + v.checkpoint);
  const Checkpoint ckpt = load_checkpoint(v.checkpoint);
  const TrainConfig c = config_from_checkpoint(ckpt);
  const auto model = model_from_checkpoint(ckpt);
  const HeadReduce how = parse_head_reduce(v.heads);
  const Dataset data =
      v.data_dir.empty() ? synthetic_splits(c).second : load_dataset(fs::path(v.data_dir) / "test", Split::kTest);

  std::vector<std::size_t> indices;
  if (v.index) {
    if (*v.index >= data.size())
      throw UsageFailure("--index " + std::to_string(*v.index) + " is outside the " + std::to_string(data.size()) +
                         " test images");
    indices.push_back(*v.index);
  } else {
    for (std::size_t i = 0; i < std::min(v.count, data.size()); ++i) indices.push_back(i);
  }

  const fs::path root(v.out_dir);
  fs::create_directories(root);
  NoGradGuard no_grad;
  Rng unused(0);
  for (std::size_t idx : indices) {
    const std::size_t one[] = {idx};
    const Tensor image = stack_images(data, one);
    ForwardTrace trace;
    const Tensor logits = model->forward(image, Mode::kInference, unused, &trace);
    const auto row = logits.data();
    const int predicted = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());

    std::vector<Tensor> per_block;
    for (const auto& a : trace.attention) per_block.push_back(reduce_heads(a, how));
    const Tensor scores = attention_rollout(per_block);
    const Tensor& pixels = data.samples[idx].image;

    char stem[32];
    std::snprintf(stem, sizeof stem, "%05zu", idx);
    render_heatmap(scores, pixels, root / ("rollout_" + std::string(stem) + ".ppm"), predicted);
    if (v.dump_raw) save_tensor(root / ("rollout_" + std::string(stem) + ".tft"), scores);
    if (trace.aggregated.numel() == scores.numel()) {
      const Tensor composite = combine_with_map(scores, trace.aggregated);
      render_heatmap(composite, pixels, root / ("rollout_mout_" + std::string(stem) + ".ppm"), predicted);
      if (v.dump_raw) save_tensor(root / ("rollout_mout_" + std::string(stem) + ".tft"), composite);
    }
    out << stem << " label " << data.samples[idx].label << " predicted " << predicted << '\n';
  }
  out << "wrote " << indices.size() << " heatmaps to " << root.string() << '\n';
  return kExitOk;
}

}  // namespace

GridAxis parse_grid_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
    throw UsageFailure("grid axis must look like key=lo:hi:step, key=a,b or key=value; got '" + spec + "'");
  GridAxis axis{spec.substr(0, eq), {}};
  const std::string body = spec.substr(eq + 1);
  if (std::count(body.begin(), body.end(), ':') == 2) {
    const auto c1 = body.find(':'), c2 = body.rfind(':');
    const auto number = [&](const std::string& s) {
      double v = 0.0;
      const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw UsageFailure("bad number '" + s + "' in " + spec);
      return v;
    };
    const double lo = number(body.substr(0, c1)), hi = number(body.substr(c1 + 1, c2 - c1 - 1)),
                 step = number(body.substr(c2 + 1));
    if (!(step > 0.0) || hi < lo) throw UsageFailure("grid range must have lo <= hi and step > 0: " + spec);
    const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    const bool integral = lo == std::round(lo) && step == std::round(step);
    for (std::size_t i = 0; i < count; ++i) {
      // Round to a short decimal so 0.4 + 3 * 0.1 prints as 0.7.
      const double v = std::round((lo + static_cast<double>(i) * step) * 1e9) / 1e9;
      std::ostringstream os;
      if (integral) os << static_cast<long long>(v);
      else os << v;
      axis.values.push_back(os.str());
    }
  } else {
    std::istringstream is(body);
    std::string item;
    while (std::getline(is, item, ','))
      if (!item.empty()) axis.values.push_back(item);
  }
  if (axis.values.empty()) throw UsageFailure("grid axis has no values: " + spec);
  return axis;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  kernels::configure_threads_from_env();

  CLI::App app{"Local-attention transformer trainer: synthetic data, training, evaluation, sweeps and attention heatmaps",
               "transfer"};
  app.require_subcommand(1, 1);

  CommonOptions gen_opts, train_opts, sweep_opts;
  std::string train_data, sweep_data, eval_checkpoint, eval_data, eval_split = "test";
  std::vector<std::string> grid;
  VisualizeOptions viz;

  auto* gen = app.add_subcommand("gen-data", "write the synthetic train/test splits as P6 images plus manifests");
  add_common(*gen, gen_opts, "data");

  auto* tr = app.add_subcommand("train", "train a model; writes metrics.csv, model.ckpt, drops.csv, config.txt");
  add_common(*tr, train_opts, "run");
  tr->add_option("--data", train_data, "dataset root with train/ and test/ (default: synthetic from config)");

  auto* ev = app.add_subcommand("eval", "print accuracy metrics of a checkpoint");
  ev->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  ev->add_option("--data", eval_data, "dataset root with train/ and test/");
  ev->add_option("--split", eval_split, "train or test")->check(CLI::IsMember({"train", "test"}));

  auto* sw = app.add_subcommand("sweep", "train once per grid point and write sweep.csv");
  add_common(*sw, sweep_opts, "sweep");
  sw->add_option("--grid", grid, "axis: key=lo:hi:step, key=a,b,c or key=value")->required();
  sw->add_option("--data", sweep_data, "dataset root with train/ and test/");

  auto* vz = app.add_subcommand("visualize", "write attention-rollout heatmaps (rollout_*.ppm)");
  vz->add_option("--checkpoint", viz.checkpoint, "checkpoint file")->required();
  vz->add_option("--data", viz.data_dir, "dataset root with a test/ directory");
  vz->add_option("--out", viz.out_dir, "output directory")->capture_default_str();
  vz->add_option("--index", viz.index, "render a single test image (per-image mode)");
  vz->add_option("--count", viz.count, "render the first N test images (batch mode)")->capture_default_str();
  vz->add_option("--heads", viz.heads, "head reduction before rollout")
      ->check(CLI::IsMember({"mean", "max", "min"}))
      ->capture_default_str();
  vz->add_flag("--dump-raw", viz.dump_raw, "also write the patch scores as TFT1 tensors");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return gen_data(gen_opts, out);
    if (tr->parsed()) return train_cmd(train_opts, train_data, out);
    if (ev->parsed()) return eval_cmd(eval_checkpoint, eval_data, eval_split, out);
    if (sw->parsed()) return sweep_cmd(sweep_opts, grid, sweep_data, out);
    if (vz->parsed()) return visualize_cmd(viz, out);
  } catch (const UsageFailure& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace transfer::cli
