// Acceptance gate: one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance 1 4 11     run a subset
//
// Criterion 8 is reported as FLAG instead of FAIL and never fails the run.

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "test_support.hpp"
#include "transfer/encoder.hpp"
#include "transfer/image.hpp"
#include "transfer/local_cnns.hpp"
#include "transfer/model.hpp"
#include "transfer/ops.hpp"
#include "transfer/regularizers.hpp"
#include "transfer/train.hpp"
#include "transfer/visualizer.hpp"

using namespace transfer;
using transfer::testing::all_equal;
using transfer::testing::grad_check;
using transfer::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kGradStep = 1e-4;
constexpr double kGradRelTol = 1e-3;
constexpr std::size_t kGradMinCoords = 50;
constexpr double kGradBudgetSec = 120.0;
constexpr std::size_t kAggregateCases = 1000;
constexpr double kRowSumTol = 1e-9;
constexpr double kHandOracleTol = 1e-10;
constexpr std::size_t kMadTrials = 10000;
constexpr double kMadFreqTol = 0.015;
constexpr std::size_t kMsadSteps = 10000;
constexpr double kChiSquareAlpha = 0.01;
constexpr double kShapeBudgetSec = 60.0;
// Pinned from the baseline run of the default configuration (see README).
constexpr double kPinnedTestAccuracy = 0.80;
constexpr double kTrainBudgetSec = 15 * 60.0;
constexpr std::size_t kAblationSeeds = 5;
constexpr double kRolloutSumTol = 1e-9;

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string num(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// 1. Gradient suite

Tensor away_from_zero(Shape shape, Rng& rng, double margin = 0.05) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    x = rng.uniform(margin, 1.0);
    if (rng.bernoulli(0.5)) x = -x;
  }
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

Tensor leaf(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return random_tensor(std::move(shape), rng, lo, hi, true);
}

// Contracts an op's output against fixed random weights so every output
// element contributes to the scalar loss.
std::function<Tensor()> weighted(std::function<Tensor()> op, Rng& rng) {
  const Tensor probe = [&] {
    NoGradGuard g;
    return op();
  }();
  const Tensor w = random_tensor(probe.shape(), rng);
  return [op = std::move(op), w] { return sum(mul(op(), w)); };
}

void randomise(ParameterSet& params, Rng& rng, double spread) {
  for (auto t : params.tensors())
    for (double& v : t.mutable_data()) v += rng.uniform(-spread, spread);
}

Verdict gradient_suite() {
  const auto t0 = clock_type::now();
  Rng rng(101);
  struct Case {
    std::string name;
    std::function<Tensor()> loss;
    std::vector<Tensor> params;
  };
  std::vector<Case> cases;
  const auto add_case = [&](std::string name, std::function<Tensor()> op, std::vector<Tensor> params) {
    cases.push_back({std::move(name), weighted(std::move(op), rng), std::move(params)});
  };

  {
    Tensor a = leaf({6, 5}, rng), b = leaf({5, 7}, rng);
    add_case("matmul", [=] { return matmul(a, b); }, {a, b});
  }
  {
    Tensor a = leaf({3, 4, 5}, rng), b = leaf({3, 5, 2}, rng), bt = leaf({3, 2, 5}, rng);
    add_case("bmm", [=] { return bmm(a, b); }, {a, b});
    add_case("bmm_trans_b", [=] { return bmm(a, bt, true); }, {a, bt});
  }
  {
    Tensor x = leaf({2, 4, 6}, rng), w = leaf({6, 5}, rng), bias = leaf({5}, rng);
    add_case("linear", [=] { return linear(x, w, bias); }, {x, w, bias});
  }
  {
    Tensor x = leaf({2, 5, 5, 3}, rng), k3 = leaf({3, 3, 3, 4}, rng), k1 = leaf({1, 1, 3, 4}, rng),
           bias = leaf({4}, rng);
    add_case("conv2d_3x3_s1", [=] { return conv2d(x, k3, 1, 1, bias); }, {x, k3, bias});
    add_case("conv2d_3x3_s2", [=] { return conv2d(x, k3, 2, 1, bias); }, {x, k3, bias});
    add_case("conv2d_1x1", [=] { return conv2d(x, k1, 1, 0, bias); }, {x, k1, bias});
  }
  {
    Tensor x = away_from_zero({8, 8}, rng);
    add_case("relu", [=] { return relu(x); }, {x});
    Tensor y = leaf({8, 8}, rng, -3.0, 3.0);
    add_case("sigmoid", [=] { return sigmoid(y); }, {y});
    add_case("gelu", [=] { return gelu(y); }, {y});
    add_case("softmax", [=] { return softmax(y); }, {y});
    add_case("softmax_axis0", [=] { return softmax(y, 0); }, {y});
  }
  {
    Tensor x = leaf({4, 3, 6}, rng), g = leaf({6}, rng), b = leaf({6}, rng);
    add_case("layer_norm", [=] { return layer_norm(x, g, b); }, {x, g, b});
  }
  {
    Tensor logits = leaf({10, 7}, rng, -2.0, 2.0);
    const std::vector<int> labels{0, 1, 2, 3, 4, 5, 6, 0, 3, 6};
    cases.push_back({"cross_entropy", [=] { return cross_entropy(logits, labels); }, {logits}});
  }
  {
    Tensor a = leaf({3, 4, 5}, rng), b = leaf({4, 5}, rng), c = leaf({3, 1, 5}, rng);
    add_case("add_broadcast", [=] { return add(a, b); }, {a, b});
    add_case("mul_broadcast", [=] { return mul(a, c); }, {a, c});
    add_case("scale", [=] { return scale(a, -1.7); }, {a});
    cases.push_back({"sum", [=] { return sum(a); }, {a}});
    cases.push_back({"mean", [=] { return mean(a); }, {a}});
  }
  {
    Tensor a = leaf({6, 6}, rng), b = leaf({6, 6}, rng), c = leaf({6, 6}, rng);
    add_case("elementwise_max", [=] { return elementwise_max(std::vector<Tensor>{a, b, c}); }, {a, b, c});
  }
  {
    Tensor x = leaf({2, 3, 4, 5}, rng), t = leaf({6}, rng), s = leaf({2, 5, 6}, rng);
    add_case("reshape", [=] { return reshape(x, {6, 20}); }, {x});
    add_case("permute", [=] { return permute(x, {3, 1, 0, 2}); }, {x});
    add_case("select", [=] { return select(x, 2, 1); }, {x});
    add_case("stack", [=] { return stack(std::vector<Tensor>{x, x}, 1); }, {x});
    add_case("prepend_token", [=] { return prepend_token(s, t); }, {s, t});
  }
  {
    Tensor a = leaf({2, 4, 4, 1}, rng), b = leaf({2, 4, 4, 1}, rng), c = leaf({2, 4, 4, 1}, rng);
    cases.push_back({"mad_drop", [=, &rng] {
                       Rng r(9);
                       auto out = mad_drop_per_sample(std::vector<Tensor>{a, b, c}, 0.7, Mode::kTraining, r);
                       return sum(mul(add(out.group[0], scale(out.group[1], 2.0)), out.group[2]));
                     },
                     {a, b, c}});
  }
  {
    ParameterSet params;
    Rng init(5);
    std::vector<LANetBranch> branches;
    for (int b = 0; b < 3; ++b) branches.push_back(LANetBranch::create(8, 4, init, params, "b" + std::to_string(b)));
    randomise(params, rng, 0.3);
    Tensor x = leaf({2, 4, 4, 8}, rng);
    std::vector<Tensor> ps = params.tensors();
    ps.push_back(x);
    add_case("local_cnns", [=] {
      Rng r(3);
      return local_cnns_forward(x, branches, 0.6, Mode::kTraining, r).features;
    }, ps);
  }
  {
    ProjectionConfig pc;
    pc.in_channels = 6;
    pc.grid = 2;
    pc.d = 8;
    pc.heads = 2;
    pc.blocks = 1;
    pc.mlp_hidden = 16;
    pc.num_classes = 3;
    ParameterSet params;
    Rng init(6);
    const EncoderParams e = EncoderParams::create(pc, init, params);
    randomise(params, rng, 0.4);
    Tensor fmap = leaf({2, 2, 2, 6}, rng);
    add_case("project_to_sequence", [=] { return project_to_sequence(fmap, e.projection); },
             {fmap, e.projection.conv_w, e.projection.conv_b, e.projection.cls, e.projection.pos});
    Tensor x = leaf({5, 8}, rng);
    const auto& blk = e.blocks[0];
    add_case("self_attention", [=] { return self_attention(x, blk.wq, blk.wk, blk.wv).output; },
             {x, blk.wq, blk.wk, blk.wv});
    Tensor xb = leaf({2, 5, 8}, rng);
    add_case("msa_with_msad", [=] {
      Rng r(4);
      return msa_with_msad(xb, blk, 2, 0.5, Mode::kTraining, r).output;
    }, {xb, blk.wq, blk.wk, blk.wv, blk.proj_w, blk.proj_b});
    add_case("encoder_block", [=] {
      Rng r(4);
      return encoder_block(xb, blk, 2, 0.5, Mode::kTraining, r).output;
    }, params.tensors());
    Tensor seq = leaf({2, 5, 8}, rng);
    add_case("classify_head", [=] { return classify_head(seq, e.head); }, {seq, e.head.w, e.head.b});
  }
  {
    ModelConfig m;
    m.stem.input_size = 8;
    m.stem.output_stage = 2;
    m.stem.stage_channels = {4, 8, 8, 8};
    m.stem.blocks_per_stage = 1;
    m.branches = 2;
    m.local_drop = {RegularizerKind::kMad, 0.5, 3};
    m.p2 = 0.5;
    m.d = 8;
    m.heads = 2;
    m.blocks = 1;
    m.mlp_hidden = 16;
    m.num_classes = 3;
    auto model = std::make_shared<TransferModel>(m, 3);
    randomise(model->parameters(), rng, 0.1);
    const Tensor images = random_tensor({2, 8, 8, 3}, rng, 0.0, 1.0);
    const std::vector<int> labels{0, 2};
    cases.push_back({"model_end_to_end_8x8", [=] {
                       Rng drop(5);
                       return cross_entropy(model->forward(images, Mode::kTraining, drop), labels);
                     },
                     model->parameters().tensors()});
  }

  double worst = 0.0;
  std::string worst_name;
  std::size_t fewest = SIZE_MAX;
  std::vector<std::string> failures;
  for (auto& c : cases) {
    std::size_t total = 0;
    for (const auto& p : c.params) total += p.numel();
    Rng pick(7);
    const auto r = grad_check(c.loss, c.params, pick, kGradMinCoords, kGradStep);
    const std::size_t coords = std::min(r.coordinates, total);
    fewest = std::min(fewest, r.coordinates);
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = c.name;
    }
    if (r.max_rel_error >= kGradRelTol || r.coordinates < kGradMinCoords)
      failures.push_back(c.name + " (rel " + num(r.max_rel_error) + ", " + std::to_string(coords) + " coords)");
  }
  const double elapsed = seconds_since(t0);
  Verdict v;
  v.pass = failures.empty() && elapsed < kGradBudgetSec;
  v.detail = std::to_string(cases.size()) + " checks, worst rel " + num(worst) + " (" + worst_name +
             "), min coords " + std::to_string(fewest) + ", " + num(elapsed, 3) + " s";
  for (const auto& f : failures) v.detail += "; FAIL " + f;
  return v;
}

// ---------------------------------------------------------------------------
// 2. aggregate_max oracle

Verdict aggregate_oracle() {
  Rng rng(202);
  std::size_t mismatches = 0;
  for (std::size_t t = 0; t < kAggregateCases; ++t) {
    const std::size_t b = 1 + rng.index(8), h = 1 + rng.index(16), w = 1 + rng.index(16);
    std::vector<Tensor> maps;
    for (std::size_t i = 0; i < b; ++i) maps.push_back(random_tensor({h, w, 1}, rng, 0.0, 1.0));
    const Tensor got = aggregate_max(maps);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double m = maps[0][y * w + x];
        for (std::size_t i = 1; i < b; ++i)
          if (maps[i][y * w + x] > m) m = maps[i][y * w + x];
        if (got[y * w + x] != m) ++mismatches;
      }
  }
  return {mismatches == 0, std::to_string(kAggregateCases) + " cases, " + std::to_string(mismatches) +
                               " mismatched elements"};
}

// ---------------------------------------------------------------------------
// 3. Attention normalisation and two-token oracle

Verdict attention_normalisation() {
  const TrainConfig defaults;
  const TransferModel model(defaults.model_config(), 1);
  Rng rng(303);
  const Tensor images = random_tensor({4, defaults.image_size, defaults.image_size, 3}, rng, 0.0, 1.0);
  ForwardTrace trace;
  Rng drop(1);
  {
    NoGradGuard g;
    model.forward(images, Mode::kTraining, drop, &trace);
  }
  double worst_row = 0.0;
  std::size_t rows = 0;
  for (const auto& a : trace.attention) {
    const std::size_t n = a.dim(3);
    for (std::size_t r = 0; r < a.numel() / n; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a[r * n + j];
      worst_row = std::max(worst_row, std::abs(s - 1.0));
      ++rows;
    }
  }

  // Two tokens, identity projections, d = 2: A = softmax(x x^T / sqrt 2).
  const Tensor x({2, 2}, std::vector<double>{0.3, -1.2, 0.8, 0.5});
  const Tensor eye({2, 2}, std::vector<double>{1, 0, 0, 1});
  const auto r = self_attention(x, eye, eye, eye);
  double worst_oracle = 0.0;
  for (int i = 0; i < 2; ++i) {
    double logits[2];
    for (int j = 0; j < 2; ++j) logits[j] = (x[i * 2] * x[j * 2] + x[i * 2 + 1] * x[j * 2 + 1]) / std::sqrt(2.0);
    const double z = std::exp(logits[0]) + std::exp(logits[1]);
    const double a[2] = {std::exp(logits[0]) / z, std::exp(logits[1]) / z};
    for (int j = 0; j < 2; ++j) {
      worst_oracle = std::max(worst_oracle, std::abs(r.attention[i * 2 + j] - a[j]));
      worst_oracle = std::max(worst_oracle, std::abs(r.output[i * 2 + j] - (a[0] * x[j] + a[1] * x[2 + j])));
    }
  }
  return {worst_row <= kRowSumTol && worst_oracle <= kHandOracleTol,
          std::to_string(rows) + " rows, max |sum-1| " + num(worst_row) + "; 2-token oracle max err " +
              num(worst_oracle)};
}

// ---------------------------------------------------------------------------
// 4. MAD contract

Verdict mad_contract() {
  Rng rng(404);
  std::vector<Tensor> group;
  for (int i = 0; i < 3; ++i) group.push_back(random_tensor({5, 5, 1}, rng, 0.01, 1.0));
  std::vector<std::string> problems;

  Rng r0(1);
  const auto id = mad_drop(group, 0.0, Mode::kTraining, r0);
  for (std::size_t i = 0; i < 3; ++i)
    if (!all_equal(id.group[i].data(), group[i].data())) problems.push_back("p=0 changed member");

  std::size_t single_zero_violations = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng r(s);
    const auto out = mad_drop(group, 1.0, Mode::kTraining, r);
    std::size_t zeroed = 0, untouched = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto d = out.group[i].data();
      if (std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; })) ++zeroed;
      else if (all_equal(d, group[i].data())) ++untouched;
    }
    if (zeroed != 1 || untouched != 2) ++single_zero_violations;
  }
  if (single_zero_violations) problems.push_back("p=1 violations " + std::to_string(single_zero_violations));

  Rng mc(77);
  std::size_t drops = 0;
  const std::vector<Tensor> pair{group[0], group[1]};
  for (std::size_t t = 0; t < kMadTrials; ++t)
    if (mad_drop(pair, 0.6, Mode::kTraining, mc).decision.dropped_index) ++drops;
  const double freq = static_cast<double>(drops) / kMadTrials;
  if (std::abs(freq - 0.6) > kMadFreqTol) problems.push_back("frequency " + num(freq));

  Rng ri(5);
  const auto before = ri.draws();
  const auto inf = mad_drop(group, 1.0, Mode::kInference, ri);
  for (std::size_t i = 0; i < 3; ++i)
    if (!all_equal(inf.group[i].data(), group[i].data())) problems.push_back("inference changed member");
  if (ri.draws() != before) problems.push_back("inference drew randomness");

  std::string detail = "p=0 identity, p=1 one-zeroed over 200 draws, freq " + num(freq) + " for p=0.6 over " +
                       std::to_string(kMadTrials) + " trials, inference identity";
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

// ---------------------------------------------------------------------------
// 5. MSAD contract

Tensor columns_zeroed(const Tensor& w, std::size_t from, std::size_t count) {
  Tensor out = w.clone();
  auto v = out.mutable_data();
  for (std::size_t r = 0; r < w.dim(0); ++r)
    for (std::size_t c = from; c < from + count; ++c) v[r * w.dim(1) + c] = 0.0;
  return out;
}

Verdict msad_contract() {
  ProjectionConfig pc;
  pc.in_channels = 8;
  pc.grid = 2;
  pc.d = 16;
  pc.heads = 4;
  pc.blocks = 2;
  pc.mlp_hidden = 16;
  pc.num_classes = 3;
  Rng rng(505);
  ParameterSet params;
  const EncoderParams e = EncoderParams::create(pc, rng, params);
  randomise(params, rng, 0.4);

  // Forced drop vs the same block with that head's value columns zeroed.
  std::size_t exact = 0, trials = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor x = random_tensor({5, 16}, rng);
    Rng r(s);
    const auto forced = msa_with_msad(x, e.blocks[0], 4, 1.0, Mode::kTraining, r);
    const std::size_t head = *forced.decisions[0].dropped_index;
    EncoderBlockParams zeroed = e.blocks[0];
    zeroed.wv = columns_zeroed(e.blocks[0].wv, head * 4, 4);
    Rng unused(0);
    const auto oracle = msa_with_msad(x, zeroed, 4, 0.0, Mode::kInference, unused);
    ++trials;
    if (all_equal(forced.output.data(), oracle.output.data())) ++exact;
  }

  // Independence of the decisions of the two blocks over many steps.
  const std::size_t cats = pc.heads + 1;
  std::vector<double> table(cats * cats, 0.0);
  Rng drop(99);
  const Tensor x = random_tensor({1, 5, 16}, rng);
  {
    NoGradGuard g;
    for (std::size_t step = 0; step < kMsadSteps; ++step) {
      const auto b0 = encoder_block(x, e.blocks[0], pc.heads, 0.3, Mode::kTraining, drop);
      const auto b1 = encoder_block(b0.output, e.blocks[1], pc.heads, 0.3, Mode::kTraining, drop);
      const auto cat = [](const DropDecision& d) { return d.dropped_index ? *d.dropped_index + 1 : 0; };
      table[cat(b0.decisions[0]) * cats + cat(b1.decisions[0])] += 1.0;
    }
  }
  std::vector<double> rows(cats, 0.0), cols(cats, 0.0);
  for (std::size_t i = 0; i < cats; ++i)
    for (std::size_t j = 0; j < cats; ++j) {
      rows[i] += table[i * cats + j];
      cols[j] += table[i * cats + j];
    }
  double stat = 0.0;
  for (std::size_t i = 0; i < cats; ++i)
    for (std::size_t j = 0; j < cats; ++j) {
      const double expected = rows[i] * cols[j] / kMsadSteps;
      stat += (table[i * cats + j] - expected) * (table[i * cats + j] - expected) / expected;
    }
  const double dof = static_cast<double>((cats - 1) * (cats - 1));
  const double p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), stat));
  const double drop_rate = 1.0 - rows[0] / kMsadSteps;

  return {exact == trials && p_value > kChiSquareAlpha,
          "forced drop exact " + std::to_string(exact) + "/" + std::to_string(trials) + "; block independence chi2 " +
              num(stat) + " on " + num(dof, 3) + " dof, p " + num(p_value) + " over " + std::to_string(kMsadSteps) +
              " steps (block-0 drop rate " + num(drop_rate, 3) + ")"};
}

// ---------------------------------------------------------------------------
// 6. Shape grid

Verdict shape_grid() {
  const auto t0 = clock_type::now();
  std::size_t combos = 0, ok = 0;
  std::string failures;
  Rng rng(606);
  for (std::size_t s : {32, 48})
    for (std::size_t stage : {2, 3, 4})
      for (std::size_t b : {1, 2, 4})
        for (std::size_t k : {4, 8})
          for (std::size_t m : {2, 4}) {
            ++combos;
            TrainConfig c;
            c.image_size = s;
            c.stage = stage;
            c.branches = b;
            c.heads = k;
            c.blocks = m;
            try {
              const TransferModel model(c.model_config(), combos);
              const Tensor img = random_tensor({2, s, s, 3}, rng, 0.0, 1.0);
              Rng drop(combos);
              NoGradGuard g;
              const Tensor logits = model.forward(img, Mode::kTraining, drop);
              if (logits.shape() == Shape{2, c.num_classes}) ++ok;
              else failures += " s" + std::to_string(s) + "/st" + std::to_string(stage);
            } catch (const std::exception& e) {
              failures += std::string(" ") + e.what();
            }
          }
  const double elapsed = seconds_since(t0);
  return {ok == combos && elapsed < kShapeBudgetSec,
          std::to_string(ok) + "/" + std::to_string(combos) + " configurations give [2 x 7] logits in " +
              num(elapsed, 3) + " s" + failures};
}

// ---------------------------------------------------------------------------
// 7. Training regression on the default configuration

Verdict training_regression() {
  const TrainConfig c;
  const auto [train_set, test_set] = synthetic_splits(c);
  const double centroid = nearest_centroid_metrics(train_set, test_set).overall_accuracy;
  const auto t0 = clock_type::now();
  TrainOptions o;
  o.on_epoch = [&](const EpochRecord& r) {
    std::cout << "      epoch " << r.epoch << " loss " << num(r.train_loss) << " test_acc " << num(r.test_accuracy)
              << " (" << num(seconds_since(t0), 3) << " s)" << std::endl;
  };
  const TrainResult r = train(c, train_set, test_set, o);
  const double elapsed = seconds_since(t0);
  const double final_acc = r.history.back().test_accuracy;
  double best = 0.0;
  for (const auto& e : r.history) best = std::max(best, e.test_accuracy);
  return {final_acc >= kPinnedTestAccuracy && elapsed < kTrainBudgetSec && centroid < 0.6,
          "final test acc " + num(final_acc) + " (best " + num(best) + ", pinned >= " + num(kPinnedTestAccuracy) +
              ") in " + num(elapsed, 4) + " s; nearest-centroid baseline " + num(centroid)};
}

// ---------------------------------------------------------------------------
// 8 and 9. Ablation ordering and branch diversity on a reduced configuration

TrainConfig ablation_config() {
  TrainConfig c;
  c.image_size = 32;
  c.stem_channels = {16, 32, 64, 128};
  c.d = 64;
  c.heads = 4;
  c.blocks = 2;
  c.mlp_hidden = 128;
  c.train_per_class = 80;
  c.test_per_class = 30;
  c.epochs = 24;
  c.lr_decay_epochs = {16};
  return c;
}

double mean_branch_correlation(const TransferModel& model, const Dataset& data) {
  std::vector<std::size_t> idx(std::min<std::size_t>(data.size(), 64));
  std::iota(idx.begin(), idx.end(), 0);
  ForwardTrace trace;
  Rng unused(0);
  {
    NoGradGuard g;
    model.forward(stack_images(data, idx), Mode::kInference, unused, &trace);
  }
  const std::size_t per = trace.branch_maps[0].numel() / idx.size();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t a = 0; a < trace.branch_maps.size(); ++a)
      for (std::size_t b = a + 1; b < trace.branch_maps.size(); ++b) {
        const auto x = trace.branch_maps[a].data().subspan(i * per, per);
        const auto y = trace.branch_maps[b].data().subspan(i * per, per);
        const double mx = std::accumulate(x.begin(), x.end(), 0.0) / per;
        const double my = std::accumulate(y.begin(), y.end(), 0.0) / per;
        double sxy = 0.0, sxx = 0.0, syy = 0.0;
        for (std::size_t j = 0; j < per; ++j) {
          sxy += (x[j] - mx) * (y[j] - my);
          sxx += (x[j] - mx) * (x[j] - mx);
          syy += (y[j] - my) * (y[j] - my);
        }
        if (sxx <= 0.0 || syy <= 0.0) continue;
        total += sxy / std::sqrt(sxx * syy);
        ++count;
      }
  return count ? total / static_cast<double>(count) : 0.0;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct AblationRuns {
  std::map<std::string, std::vector<double>> accuracy;
  std::map<std::string, std::vector<double>> correlation;
  bool done = false;
};

AblationRuns& ablation_runs() {
  static AblationRuns runs;
  if (runs.done) return runs;
  const TrainConfig base = ablation_config();
  const auto [train_set, test_set] = synthetic_splits(base);
  struct Variant {
    const char* name;
    bool local;
    double p1, p2;
  };
  const Variant variants[] = {
      {"baseline", false, 0.0, 0.0}, {"+local", true, 0.0, 0.0}, {"+MAD", true, 0.6, 0.0}, {"+MSAD", true, 0.6, 0.3}};
  TrainOptions o;
  o.evaluate_each_epoch = false;
  for (std::uint64_t seed = 0; seed < kAblationSeeds; ++seed)
    for (const auto& v : variants) {
      TrainConfig c = base;
      c.local_cnns = v.local;
      c.p1 = v.p1;
      c.p2 = v.p2;
      c.seed = seed;
      const TrainResult r = train(c, train_set, test_set, o);
      const double acc = evaluate(*r.model, test_set).overall_accuracy;
      runs.accuracy[v.name].push_back(acc);
      if (v.local) runs.correlation[v.name].push_back(mean_branch_correlation(*r.model, test_set));
      std::cout << "      seed " << seed << ' ' << v.name << " test_acc " << num(acc) << std::endl;
    }
  runs.done = true;
  return runs;
}

Verdict ablation_direction() {
  auto& runs = ablation_runs();
  const char* order[] = {"baseline", "+local", "+MAD", "+MSAD"};
  std::string detail = "median test acc over " + std::to_string(kAblationSeeds) + " seeds:";
  bool ordered = true;
  double prev = -1.0;
  for (const char* name : order) {
    const double m = median(runs.accuracy[name]);
    detail += std::string(" ") + name + " " + num(m);
    if (m < prev) ordered = false;
    prev = m;
  }
  return {ordered, detail};
}

Verdict diversity_effect() {
  auto& runs = ablation_runs();
  const double with_mad = median(runs.correlation["+MAD"]);
  const double without = median(runs.correlation["+local"]);
  return {with_mad < without, "median mean pairwise branch-map correlation: p1=0.6 " + num(with_mad) + ", p1=0 " +
                                  num(without)};
}

// ---------------------------------------------------------------------------
// 10. Determinism of the train command

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "transfer_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg = root / "config.txt";
  std::ofstream(cfg) << "image_size=32\nd=64\nk=4\nM=2\nmlp_hidden=128\ntrain_per_class=10\ntest_per_class=5\n"
                        "epochs=2\nseed=11\n";
  std::ostringstream sink;
  for (const char* run : {"a", "b"}) {
    const int code = cli::run({"train", "--config", cfg.string(), "--out", (root / run).string()}, sink, sink);
    if (code != 0) return {false, std::string("train exited ") + std::to_string(code) + ": " + sink.str()};
  }
  const bool csv = slurp(root / "a" / "metrics.csv") == slurp(root / "b" / "metrics.csv");
  const bool ckpt = slurp(root / "a" / "model.ckpt") == slurp(root / "b" / "model.ckpt");
  const bool nonempty = !slurp(root / "a" / "model.ckpt").empty();
  return {csv && ckpt && nonempty, std::string("metrics.csv ") + (csv ? "identical" : "DIFFERENT") +
                                       ", model.ckpt " + (ckpt ? "identical" : "DIFFERENT") + " across two runs"};
}

// ---------------------------------------------------------------------------
// 11. Visualizer

std::vector<unsigned char> read_p6_bytes(const fs::path& path, std::size_t& w, std::size_t& h) {
  std::ifstream is(path, std::ios::binary);
  std::string magic;
  std::size_t maxval = 0;
  is >> magic >> w >> h >> maxval;
  is.get();
  if (magic != "P6" || maxval != 255) return {};
  std::vector<unsigned char> bytes(w * h * 3);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  return is ? bytes : std::vector<unsigned char>{};
}

Verdict visualizer() {
  TrainConfig c;
  c.test_per_class = 3;
  const TransferModel model(c.model_config(), 8);
  const Dataset data = synthetic_splits(c).second;
  const fs::path root = fs::temp_directory_path() / "transfer_acceptance_visualizer";
  fs::remove_all(root);
  fs::create_directories(root);
  double worst = 0.0;
  std::size_t roundtrips = 0, images = 0;
  Rng unused(0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t one[] = {i};
    ForwardTrace trace;
    {
      NoGradGuard g;
      model.forward(stack_images(data, one), Mode::kInference, unused, &trace);
    }
    for (HeadReduce how : {HeadReduce::kMean, HeadReduce::kMax, HeadReduce::kMin}) {
      std::vector<Tensor> blocks;
      for (const auto& a : trace.attention) blocks.push_back(reduce_heads(a, how));
      const Tensor scores = attention_rollout(blocks);
      double s = 0.0;
      for (double v : scores.data()) s += v;
      worst = std::max(worst, std::abs(s - 1.0));
      const Tensor composite = combine_with_map(scores, trace.aggregated);
      s = 0.0;
      for (double v : composite.data()) s += v;
      worst = std::max(worst, std::abs(s - 1.0));
    }
    std::vector<Tensor> blocks;
    for (const auto& a : trace.attention) blocks.push_back(reduce_heads(a, HeadReduce::kMean));
    const fs::path file = root / ("rollout_" + std::to_string(i) + ".ppm");
    const Heatmap h = render_heatmap(attention_rollout(blocks), data.samples[i].image, file);
    std::size_t w = 0, hh = 0;
    const auto bytes = read_p6_bytes(file, w, hh);
    if (w == h.overlay.width && hh == h.overlay.height &&
        std::equal(bytes.begin(), bytes.end(), h.overlay.pixels.begin(), h.overlay.pixels.end()))
      ++roundtrips;
    ++images;
  }
  return {worst <= kRolloutSumTol && roundtrips == images,
          "max |sum-1| " + num(worst) + " over " + std::to_string(images * 6) + " rollouts; " +
              std::to_string(roundtrips) + "/" + std::to_string(images) + " P6 files round-trip"};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    Verdict (*run)();
    bool blocking;
  };
  const Criterion criteria[] = {
      {1, "gradient suite", gradient_suite, true},
      {2, "aggregate_max oracle", aggregate_oracle, true},
      {3, "attention normalisation", attention_normalisation, true},
      {4, "MAD contract", mad_contract, true},
      {5, "MSAD contract", msad_contract, true},
      {6, "shape grid", shape_grid, true},
      {7, "training regression", training_regression, true},
      {8, "ablation direction", ablation_direction, false},
      {9, "diversity effect", diversity_effect, true},
      {10, "determinism", determinism, true},
      {11, "visualizer", visualizer, true},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = clock_type::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const char* tag = v.pass ? "PASS" : (c.blocking ? "FAIL" : "FLAG");
    if (!v.pass && c.blocking) ++failed;
    std::cout << "[" << tag << "] " << c.id << ". " << c.name << ": " << v.detail << " (" << num(seconds_since(t0), 3)
              << " s)" << std::endl;
  }
  return failed ? 1 : 0;
}
