#include "transfer/encoder.hpp"

#include <cmath>
#include <string>

#include "transfer/errors.hpp"
#include "transfer/ops.hpp"

namespace transfer {
namespace {

constexpr double kInitStd = 0.02;

double fan_in_std(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

// Views an unbatched input as a batch of one.
Tensor as_batch(const Tensor& x, std::size_t unbatched_rank) {
  if (x.rank() == unbatched_rank) {
    Shape s = x.shape();
    s.insert(s.begin(), 1);
    return reshape(x, s);
  }
  return x;
}

Tensor drop_batch(const Tensor& x) {
  Shape s(x.shape().begin() + 1, x.shape().end());
  return reshape(x, s);
}

}  // namespace

void ProjectionConfig::validate() const {
  if (heads == 0 || d % heads != 0)
    throw ConfigError("encoder: embedding width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  if (blocks == 0) throw ConfigError("encoder: need at least one block");
  if (num_classes < 2) throw ConfigError("encoder: need at least two classes");
  if (grid == 0 || in_channels == 0 || mlp_hidden == 0) throw ConfigError("encoder: zero-sized dimension");
}

EncoderParams EncoderParams::create(const ProjectionConfig& c, Rng& rng, ParameterSet& params) {
  c.validate();
  EncoderParams e;
  e.projection.conv_w = params.add("encoder.input.weight", init::he_normal({1, 1, c.in_channels, c.d}, c.in_channels, rng));
  e.projection.conv_b = params.add("encoder.input.bias", init::zeros({c.d}));
  e.projection.cls = params.add("encoder.cls", init::truncated_normal({1, c.d}, kInitStd, rng));
  e.projection.pos = params.add("encoder.pos", init::truncated_normal({c.tokens(), c.d}, kInitStd, rng));
  for (std::size_t i = 0; i < c.blocks; ++i) {
    const std::string p = "encoder.block" + std::to_string(i);
    EncoderBlockParams b;
    b.ln1_g = params.add(p + ".ln1.gain", init::ones({c.d}));
    b.ln1_b = params.add(p + ".ln1.bias", init::zeros({c.d}));
    b.wq = params.add(p + ".wq", init::truncated_normal({c.d, c.d}, fan_in_std(c.d), rng));
    b.wk = params.add(p + ".wk", init::truncated_normal({c.d, c.d}, fan_in_std(c.d), rng));
    b.wv = params.add(p + ".wv", init::truncated_normal({c.d, c.d}, fan_in_std(c.d), rng));
    b.proj_w = params.add(p + ".proj.weight", init::truncated_normal({c.d, c.d}, fan_in_std(c.d), rng));
    b.proj_b = params.add(p + ".proj.bias", init::zeros({c.d}));
    b.ln2_g = params.add(p + ".ln2.gain", init::ones({c.d}));
    b.ln2_b = params.add(p + ".ln2.bias", init::zeros({c.d}));
    b.mlp1_w = params.add(p + ".mlp1.weight", init::truncated_normal({c.d, c.mlp_hidden}, fan_in_std(c.d), rng));
    b.mlp1_b = params.add(p + ".mlp1.bias", init::zeros({c.mlp_hidden}));
    b.mlp2_w = params.add(p + ".mlp2.weight", init::truncated_normal({c.mlp_hidden, c.d}, fan_in_std(c.mlp_hidden), rng));
    b.mlp2_b = params.add(p + ".mlp2.bias", init::zeros({c.d}));
    e.blocks.push_back(std::move(b));
  }
  e.norm_g = params.add("encoder.norm.gain", init::ones({c.d}));
  e.norm_b = params.add("encoder.norm.bias", init::zeros({c.d}));
  e.head.w = params.add("head.linear.weight", init::truncated_normal({c.d, c.num_classes}, kInitStd, rng));
  e.head.b = params.add("head.linear.bias", init::zeros({c.num_classes}));
  return e;
}

Tensor project_to_sequence(const Tensor& x, const ProjectionParams& params) {
  const bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3)
    throw ConfigError("projection: expected h x w x c features, got " + shape_string(x.shape()));
  const Tensor xb = as_batch(x, 3);
  const std::size_t n = xb.dim(0), h = xb.dim(1), w = xb.dim(2);
  const std::size_t d = params.conv_w.dim(3);
  if (xb.dim(3) != params.conv_w.dim(2) || params.pos.dim(0) != h * w + 1 || params.pos.dim(1) != d)
    throw ConfigError("projection: features " + shape_string(x.shape()) + " do not match conv " +
                      shape_string(params.conv_w.shape()) + " / position table " +
                      shape_string(params.pos.shape()));
  const Tensor proj = conv2d(xb, params.conv_w, 1, 0, params.conv_b);
  const Tensor seq = add(prepend_token(reshape(proj, {n, h * w, d}), params.cls), params.pos);
  return batched ? seq : drop_batch(seq);
}

AttentionResult self_attention(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv) {
  const Tensor q = matmul(x, wq);
  const Tensor k = matmul(x, wk);
  const Tensor v = matmul(x, wv);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(wk.dim(1)));
  const Tensor a = softmax(scale(matmul(q, permute(k, {1, 0})), inv_sqrt_dk), -1);
  return {matmul(a, v), a};
}

MsaResult msa_with_msad(const Tensor& x, const EncoderBlockParams& block, std::size_t heads, double p2,
                        Mode mode, Rng& rng) {
  const bool batched = x.rank() == 3;
  const Tensor xb = as_batch(x, 2);
  const std::size_t n = xb.dim(0), len = xb.dim(1), d = xb.dim(2);
  if (heads == 0 || d % heads != 0)
    throw ConfigError("msa: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dk = d / heads;

  const auto split_heads = [&](const Tensor& t) {
    return reshape(permute(reshape(t, {n, len, heads, dk}), {0, 2, 1, 3}), {n * heads, len, dk});
  };
  const Tensor q = split_heads(scale(linear(xb, block.wq), 1.0 / std::sqrt(static_cast<double>(dk))));
  const Tensor k = split_heads(linear(xb, block.wk));
  const Tensor v = split_heads(linear(xb, block.wv));
  const Tensor a = softmax(bmm(q, k, true), -1);
  Tensor o = reshape(bmm(a, v), {n, heads, len, dk});

  MsaResult out;
  out.decisions.reserve(n);
  std::vector<double> mask(n * heads, 1.0);
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    out.decisions.push_back(draw_drop(heads, p2, mode, rng));
    if (const auto idx = out.decisions.back().dropped_index) {
      mask[i * heads + *idx] = 0.0;
      any = true;
    }
  }
  if (any) o = mul(o, Tensor({n, heads, 1, 1}, std::move(mask)));

  const Tensor merged = reshape(permute(o, {0, 2, 1, 3}), {n, len, d});
  const Tensor projected = linear(merged, block.proj_w, block.proj_b);
  out.output = batched ? projected : drop_batch(projected);
  out.attention = reshape(a, {n, heads, len, len});
  return out;
}

BlockResult encoder_block(const Tensor& x, const EncoderBlockParams& block, std::size_t heads, double p2,
                          Mode mode, Rng& rng) {
  auto msa = msa_with_msad(layer_norm(x, block.ln1_g, block.ln1_b), block, heads, p2, mode, rng);
  const Tensor mid = add(x, msa.output);
  const Tensor hidden = gelu(linear(layer_norm(mid, block.ln2_g, block.ln2_b), block.mlp1_w, block.mlp1_b));
  return {add(mid, linear(hidden, block.mlp2_w, block.mlp2_b)), std::move(msa.attention),
          std::move(msa.decisions)};
}

Tensor classify_head(const Tensor& seq, const HeadParams& head) {
  if (seq.rank() != 2 && seq.rank() != 3)
    throw DimensionError("head: expected a token sequence, got " + shape_string(seq.shape()));
  const Tensor cls = select(seq, static_cast<int>(seq.rank()) - 2, 0);
  return linear(cls, head.w, head.b);
}

}  // namespace transfer
