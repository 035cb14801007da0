#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "test_support.hpp"
#include "transfer/errors.hpp"
#include "transfer/image.hpp"
#include "transfer/visualizer.hpp"

using namespace transfer;
using transfer::testing::all_equal;
using transfer::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

Tensor uniform_rows(std::size_t n) { return Tensor({n, n}, 1.0 / static_cast<double>(n)); }

Tensor random_stochastic(std::size_t n, Rng& rng) {
  Tensor t = random_tensor({n, n}, rng, 0.05, 1.0);
  auto v = t.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += v[i * n + j];
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] /= s;
  }
  return t;
}

// Plain nested-loop rollout used as the reference.
std::vector<double> rollout_oracle(const std::vector<Tensor>& blocks) {
  const std::size_t n = blocks[0].dim(0);
  std::vector<std::vector<double>> r(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) r[i][i] = 1.0;
  for (const auto& a : blocks) {
    std::vector<std::vector<double>> m(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) m[i][j] = (a[i * n + j] + (i == j ? 1.0 : 0.0)) / 2.0;
    std::vector<std::vector<double>> next(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < n; ++k) next[i][j] += m[i][k] * r[k][j];
    r = next;
  }
  std::vector<double> out(r[0].begin() + 1, r[0].end());
  double s = 0.0;
  for (double v : out) s += v;
  for (double& v : out) v /= s;
  return out;
}

}  // namespace

TEST_CASE("uniform attention rolls out to uniform patch scores") {
  const std::vector<Tensor> blocks(3, uniform_rows(5));
  const Tensor s = attention_rollout(blocks);
  REQUIRE(s.numel() == 4);
  for (double v : s.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("identity attention keeps no mass on patches and falls back to uniform") {
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.mutable_data()[i * 4 + i] = 1.0;
  const std::vector<Tensor> blocks(2, eye);
  const Tensor s = attention_rollout(blocks);
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("3x3 rollout over two blocks matches a hand calculation") {
  const Tensor a({3, 3}, std::vector<double>{0.5, 0.25, 0.25, 0.2, 0.6, 0.2, 0.1, 0.1, 0.8});
  const Tensor b({3, 3}, std::vector<double>{0.2, 0.2, 0.6, 0.3, 0.3, 0.4, 0.5, 0.25, 0.25});
  // (A + I) / 2 has columns 1, 2 of rows 0..2 equal to (0.125, 0.125), (0.8, 0.1),
  // (0.05, 0.9); row 0 of (B + I) / 2 is (0.6, 0.1, 0.3). Row 0 of the product:
  // 0.6*0.125 + 0.1*0.8 + 0.3*0.05 = 0.17 and 0.6*0.125 + 0.1*0.1 + 0.3*0.9 = 0.355,
  // renormalised -> 34/105, 71/105.
  const std::vector<Tensor> blocks{a, b};
  const Tensor s = attention_rollout(blocks);
  CHECK(std::abs(s[0] - 34.0 / 105.0) < 1e-10);
  CHECK(std::abs(s[1] - 71.0 / 105.0) < 1e-10);
}

TEST_CASE("rollout matches the nested-loop reference on random inputs") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> blocks;
    const std::size_t depth = 1 + rng.index(4);
    for (std::size_t i = 0; i < depth; ++i) blocks.push_back(random_stochastic(7, rng));
    const Tensor s = attention_rollout(blocks);
    const auto ref = rollout_oracle(blocks);
    double sum = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(std::abs(s[i] - ref[i]) < 1e-12);
      sum += s[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("rollout rejects matrices that are not row-stochastic") {
  Tensor off = uniform_rows(3);
  off.mutable_data()[0] += 1e-3;
  CHECK_THROWS_AS(attention_rollout(std::vector<Tensor>{off}), ContractError);
  Tensor neg({2, 2}, std::vector<double>{1.5, -0.5, 0.5, 0.5});
  CHECK_THROWS_AS(attention_rollout(std::vector<Tensor>{neg}), ContractError);
  Tensor tiny = uniform_rows(3);
  tiny.mutable_data()[0] += 1e-9;
  CHECK_NOTHROW(attention_rollout(std::vector<Tensor>{tiny}));
  CHECK_THROWS_AS(attention_rollout(std::vector<Tensor>{uniform_rows(3), uniform_rows(4)}), DimensionError);
  CHECK_THROWS_AS(attention_rollout(std::vector<Tensor>{}), UsageError);
}

TEST_CASE("head reduction") {
  const Tensor heads({2, 2, 2}, std::vector<double>{0.5, 0.5, 0.9, 0.1, 0.1, 0.9, 0.3, 0.7});
  const Tensor mean = reduce_heads(heads, HeadReduce::kMean);
  const std::vector<double> expected{0.3, 0.7, 0.6, 0.4};
  for (std::size_t i = 0; i < 4; ++i) CHECK(mean[i] == doctest::Approx(expected[i]).epsilon(1e-15));
  const Tensor mx = reduce_heads(heads, HeadReduce::kMax);
  CHECK(mx[0] == doctest::Approx(0.5 / 1.4));
  CHECK(mx[1] == doctest::Approx(0.9 / 1.4));
  CHECK(mx[2] == doctest::Approx(0.9 / 1.6));
  const Tensor mn = reduce_heads(heads, HeadReduce::kMin);
  CHECK(mn[0] == doctest::Approx(0.1 / 0.6));
  CHECK(mn[3] == doctest::Approx(0.1 / 0.4));
  const Tensor batched({1, 2, 2, 2}, std::vector<double>(heads.data().begin(), heads.data().end()));
  CHECK(all_equal(reduce_heads(batched, HeadReduce::kMean).data(), mean.data()));
  CHECK_THROWS_AS(parse_head_reduce("median"), ConfigError);
  CHECK(parse_head_reduce("max") == HeadReduce::kMax);
}

TEST_CASE("combining with the local map") {
  const Tensor scores({4}, std::vector<double>{0.25, 0.25, 0.25, 0.25});
  const Tensor map({2, 2}, std::vector<double>{1.0, 0.0, 0.0, 3.0});
  const Tensor c = combine_with_map(scores, map);
  CHECK(all_equal(c.data(), std::vector<double>{0.25, 0.0, 0.0, 0.75}));
  const Tensor z = combine_with_map(scores, Tensor({2, 2}));
  for (double v : z.data()) CHECK(v == 0.25);
  CHECK_THROWS_AS(combine_with_map(scores, Tensor({3, 3})), DimensionError);
}

TEST_CASE("jet endpoints") {
  const auto lo = jet(0.0), mid = jet(0.5), hi = jet(1.0);
  CHECK(lo[2] > lo[0]);
  CHECK(hi[0] > hi[2]);
  CHECK(mid[1] == 1.0);
  CHECK(mid[0] == doctest::Approx(mid[2]));
}

TEST_CASE("constant scores render at the middle of the colour map") {
  const Tensor image({8, 8, 3}, 0.4);
  const Heatmap h = render_heatmap(Tensor({4}, 0.25), image, 3);
  CHECK(h.class_label == 3);
  for (double v : h.values.data()) CHECK(v == 0.5);
  const auto c = jet(0.5);
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(static_cast<int>(h.overlay.pixels[i * 3 + k]) ==
            static_cast<int>(std::lround((0.5 * c[k] + 0.5 * 0.4) * 255.0)));
}

TEST_CASE("a hot patch is hottest at its own location") {
  std::vector<double> s(9, 0.01);
  s[2] = 0.92;  // top-right
  const Heatmap h = render_heatmap(Tensor({9}, s), Tensor({24, 24, 3}, 0.0));
  const auto v = h.values.data();
  CHECK(v[0 * 24 + 23] == 1.0);
  CHECK(v[23 * 24 + 0] == 0.0);
  CHECK(v[4 * 24 + 20] > v[20 * 24 + 4]);
  CHECK_THROWS_AS(render_heatmap(Tensor({5}, 0.2), Tensor({8, 8, 3})), DimensionError);
}

TEST_CASE("heatmap files round trip and rendering is deterministic") {
  const fs::path dir = fs::temp_directory_path() / "transfer_test_visualizer";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(4);
  const Tensor scores = random_tensor({16}, rng, 0.0, 1.0);
  const Tensor image = random_tensor({32, 32, 3}, rng, 0.0, 1.0);
  const Heatmap a = render_heatmap(scores, image, dir / "h.ppm", 1);
  const Heatmap b = render_heatmap(scores, image, 1);
  CHECK(a.overlay.pixels == b.overlay.pixels);
  const Raster back = read_netpbm(dir / "h.ppm");
  CHECK(back.width == 32);
  CHECK(back.height == 32);
  CHECK(back.channels == 3);
  CHECK(back.pixels == a.overlay.pixels);
}

TEST_CASE("bilinear upsampling of a constant and a ramp") {
  const Tensor c = upsample_bilinear(Tensor({2, 2}, 0.7), 9);
  for (double v : c.data()) CHECK(v == doctest::Approx(0.7));
  const Tensor ramp = upsample_bilinear(Tensor({1, 2}, std::vector<double>{0.0, 1.0}), 4);
  // Pixel centres map to -0.25, 0.25, 0.75, 1.25 in source columns, clamped.
  CHECK(ramp[0] == 0.0);
  CHECK(ramp[1] == doctest::Approx(0.25));
  CHECK(ramp[2] == doctest::Approx(0.75));
  CHECK(ramp[3] == 1.0);
}
