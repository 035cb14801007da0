#pragma once

// Projection of feature maps to a token sequence and the Transformer encoder
// whose multi-head attention is regularised by per-sample head dropping.

#include <vector>

#include "transfer/params.hpp"
#include "transfer/regularizers.hpp"
#include "transfer/tensor.hpp"

namespace transfer {

struct ProjectionConfig {
  std::size_t in_channels = 64;
  std::size_t grid = 6;  // h == w of the incoming feature map
  std::size_t d = 128;   // c2, also the embedding width
  std::size_t heads = 8;
  std::size_t blocks = 4;
  std::size_t mlp_hidden = 256;
  std::size_t num_classes = 7;

  void validate() const;
  std::size_t tokens() const { return grid * grid + 1; }
  std::size_t head_dim() const { return d / heads; }
};

struct ProjectionParams {
  Tensor conv_w, conv_b;  // 1x1 conv c -> d
  Tensor cls;             // [1 x d]
  Tensor pos;             // [tokens x d]
};

struct EncoderBlockParams {
  Tensor ln1_g, ln1_b;
  Tensor wq, wk, wv;  // [d x d], heads packed along the output axis
  Tensor proj_w, proj_b;
  Tensor ln2_g, ln2_b;
  Tensor mlp1_w, mlp1_b, mlp2_w, mlp2_b;
};

struct HeadParams {
  Tensor w, b;
};

struct EncoderParams {
  ProjectionParams projection;
  std::vector<EncoderBlockParams> blocks;
  Tensor norm_g, norm_b;  // applied to every token after the last block
  HeadParams head;

  static EncoderParams create(const ProjectionConfig& config, Rng& init_rng, ParameterSet& params);
};

/// 1x1 conv, row-major flatten, class token first, plus position embeddings.
/// [h x w x c] -> [(h*w+1) x d]; [n x h x w x c] -> [n x (h*w+1) x d].
Tensor project_to_sequence(const Tensor& x, const ProjectionParams& params);

struct AttentionResult {
  Tensor output;     // O = A v
  Tensor attention;  // A
};

/// Single-head attention on [N x d]: A = softmax(q k^T / sqrt(d_k)), O = A v.
AttentionResult self_attention(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv);

struct MsaResult {
  Tensor output;                        // [n x N x d] (or [N x d])
  Tensor attention;                     // [n x heads x N x N]
  std::vector<DropDecision> decisions;  // one per sample
};

/// Multi-head attention with head dropping applied to the per-head outputs
/// before concatenation and output projection.
MsaResult msa_with_msad(const Tensor& x, const EncoderBlockParams& block, std::size_t heads, double p2,
                        Mode mode, Rng& rng);

struct BlockResult {
  Tensor output;
  Tensor attention;
  std::vector<DropDecision> decisions;
};

/// Pre-norm block: x + MSA(LN(x)), then + MLP(LN(.)).
BlockResult encoder_block(const Tensor& x, const EncoderBlockParams& block, std::size_t heads, double p2,
                          Mode mode, Rng& rng);

/// Linear readout of the class token: [N x d] -> [C], [n x N x d] -> [n x C].
Tensor classify_head(const Tensor& seq, const HeadParams& head);

}  // namespace transfer
