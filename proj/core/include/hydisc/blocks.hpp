#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "hydisc/optim.hpp"
#include "hydisc/rng.hpp"
#include "hydisc/tensor.hpp"

namespace hydisc {

// Multi-head attention projections. Queries are taken from a model_dim
// stream; keys and values from a kv_dim stream (kv_dim == model_dim for
// self-attention, the raw conditioning feature width for cross-attention).
// model_dim must be divisible by heads; checked at construction.
struct AttentionParams {
  int model_dim = 0;
  int kv_dim = 0;
  int heads = 0;
  Tensor wq;  // model_dim x model_dim
  Tensor wk;  // kv_dim x model_dim
  Tensor wv;  // kv_dim x model_dim
  Tensor wo;  // model_dim x model_dim

  ParamSet params();
};

AttentionParams make_attention(int model_dim, int kv_dim, int heads, RandomStream& rng);

// softmax(Q Kt / sqrt(d_k)) V on already-projected single-head inputs.
// causal masks strictly-upper entries so row i attends to columns <= i.
Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal);

// Full multi-head block: project, split heads, attend, concat, output-project.
Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionParams& p,
                            bool causal);

// Causal self-attention over the running sequence.
Tensor intra_modality_attention(const Tensor& z, const AttentionParams& p);
// Queries from the running sequence, keys/values from the conditioning
// sequence; no causal mask on the condition.
Tensor inter_modality_attention(const Tensor& z, const Tensor& condition, const AttentionParams& p);

// Pre-norm residual transformer layer:
//   x + self_attn(LN(x)); optionally + cross_attn(LN(.), condition); + FF(LN(.))
// FF is width 4*model_dim with GELU.
struct TransformerLayerParams {
  int model_dim = 0;
  bool causal_self = false;
  AttentionParams self_attn;
  std::optional<AttentionParams> cross_attn;
  Tensor ln1_gain, ln1_bias;
  Tensor lnx_gain, lnx_bias;  // present iff cross_attn
  Tensor ln2_gain, ln2_bias;
  Tensor ff_w1, ff_b1;  // model_dim x 4*model_dim
  Tensor ff_w2, ff_b2;  // 4*model_dim x model_dim

  ParamSet params();
};

TransformerLayerParams make_transformer_layer(int model_dim, int heads, bool causal_self,
                                              std::optional<int> cross_kv_dim, RandomStream& rng);

Tensor transformer_layer(const Tensor& x, const std::optional<Tensor>& condition,
                         const TransformerLayerParams& p);

// sigmoid(h W + b) element-wise gating of h. Returns (gated output, gate).
struct GateParams {
  Tensor w;  // dim x dim
  Tensor b;  // 1 x dim

  ParamSet params();
};

GateParams make_gate(int dim, RandomStream& rng);
std::pair<Tensor, Tensor> gated_attention(const Tensor& h, const GateParams& p);

// Sinusoidal position table, rows 0..length-1, as a constant tensor.
Tensor sinusoidal_positions(int length, int dim);

// Xavier-uniform weight; zero bias is the convention everywhere.
Tensor xavier_uniform(int fan_in, int fan_out, RandomStream& rng);

}  // namespace hydisc
