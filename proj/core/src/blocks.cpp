#include "hydisc/blocks.hpp"

#include <cmath>

namespace hydisc {

Tensor xavier_uniform(int fan_in, int fan_out, RandomStream& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> data(static_cast<std::size_t>(fan_in) * fan_out);
  for (double& v : data) v = rng.next_uniform(-limit, limit);
  return Tensor::parameter(fan_in, fan_out, std::move(data));
}

ParamSet AttentionParams::params() {
  ParamSet p;
  p.add("wq", wq);
  p.add("wk", wk);
  p.add("wv", wv);
  p.add("wo", wo);
  return p;
}

AttentionParams make_attention(int model_dim, int kv_dim, int heads, RandomStream& rng) {
  if (heads <= 0) throw ConfigError("attention: heads must be positive, got " + std::to_string(heads));
  if (model_dim % heads != 0) {
    throw ConfigError("attention: model_dim " + std::to_string(model_dim) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  AttentionParams p;
  p.model_dim = model_dim;
  p.kv_dim = kv_dim;
  p.heads = heads;
  p.wq = xavier_uniform(model_dim, model_dim, rng);
  p.wk = xavier_uniform(kv_dim, model_dim, rng);
  p.wv = xavier_uniform(kv_dim, model_dim, rng);
  p.wo = xavier_uniform(model_dim, model_dim, rng);
  return p;
}

namespace {

// Strictly-upper-triangular -1e30 mask. Finite so downstream checks hold;
// after max-subtraction exp() underflows to exactly 0, making masked
// positions bit-exact no-ops.
Tensor causal_mask(int rows, int cols) {
  std::vector<double> m(static_cast<std::size_t>(rows) * cols, 0.0);
  for (int i = 0; i < rows; ++i) {
    for (int j = i + 1; j < cols; ++j) m[static_cast<std::size_t>(i) * cols + j] = -1e30;
  }
  return Tensor::from_rows(rows, cols, std::move(m));
}

}  // namespace

Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal) {
  if (q.cols() != k.cols()) {
    throw DimensionError("scaled_attention: query/key width mismatch: " + q.shape_str() + " vs " +
                         k.shape_str());
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("scaled_attention: key/value length mismatch: " + k.shape_str() + " vs " +
                         v.shape_str());
  }
  if (causal && q.rows() != k.rows()) {
    throw ContractError("scaled_attention: causal masking requires square scores, got " +
                        q.shape_str() + " vs " + k.shape_str());
  }
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(k.cols())));
  if (causal) scores = add(scores, causal_mask(q.rows(), k.rows()));
  return matmul(softmax_rows(scores), v);
}

Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionParams& p,
                            bool causal) {
  if (x_q.cols() != p.model_dim) {
    throw DimensionError("multi_head_attention: query input " + x_q.shape_str() +
                         " does not match model_dim " + std::to_string(p.model_dim));
  }
  if (x_kv.cols() != p.kv_dim) {
    throw DimensionError("multi_head_attention: key/value input " + x_kv.shape_str() +
                         " does not match kv_dim " + std::to_string(p.kv_dim));
  }
  const Tensor q = matmul(x_q, p.wq);
  const Tensor k = matmul(x_kv, p.wk);
  const Tensor v = matmul(x_kv, p.wv);
  const int dk = p.model_dim / p.heads;
  std::vector<Tensor> heads;
  heads.reserve(p.heads);
  for (int h = 0; h < p.heads; ++h) {
    const int c0 = h * dk, c1 = (h + 1) * dk;
    heads.push_back(scaled_attention(slice_cols(q, c0, c1), slice_cols(k, c0, c1),
                                     slice_cols(v, c0, c1), causal));
  }
  return matmul(concat_cols(heads), p.wo);
}

Tensor intra_modality_attention(const Tensor& z, const AttentionParams& p) {
  return multi_head_attention(z, z, p, /*causal=*/true);
}

Tensor inter_modality_attention(const Tensor& z, const Tensor& condition, const AttentionParams& p) {
  return multi_head_attention(z, condition, p, /*causal=*/false);
}

ParamSet TransformerLayerParams::params() {
  ParamSet p;
  p.extend(self_attn.params(), "self.");
  if (cross_attn) p.extend(cross_attn->params(), "cross.");
  p.add("ln1.gain", ln1_gain);
  p.add("ln1.bias", ln1_bias);
  if (cross_attn) {
    p.add("lnx.gain", lnx_gain);
    p.add("lnx.bias", lnx_bias);
  }
  p.add("ln2.gain", ln2_gain);
  p.add("ln2.bias", ln2_bias);
  p.add("ff.w1", ff_w1);
  p.add("ff.b1", ff_b1);
  p.add("ff.w2", ff_w2);
  p.add("ff.b2", ff_b2);
  return p;
}

TransformerLayerParams make_transformer_layer(int model_dim, int heads, bool causal_self,
                                              std::optional<int> cross_kv_dim, RandomStream& rng) {
  TransformerLayerParams p;
  p.model_dim = model_dim;
  p.causal_self = causal_self;
  p.self_attn = make_attention(model_dim, model_dim, heads, rng);
  if (cross_kv_dim) p.cross_attn = make_attention(model_dim, *cross_kv_dim, heads, rng);
  auto ones = [model_dim]() { return Tensor::parameter(1, model_dim, std::vector<double>(model_dim, 1.0)); };
  auto zeros = [model_dim]() { return Tensor::parameter(1, model_dim, std::vector<double>(model_dim, 0.0)); };
  p.ln1_gain = ones();
  p.ln1_bias = zeros();
  if (cross_kv_dim) {
    p.lnx_gain = ones();
    p.lnx_bias = zeros();
  }
  p.ln2_gain = ones();
  p.ln2_bias = zeros();
  const int hidden = 4 * model_dim;
  p.ff_w1 = xavier_uniform(model_dim, hidden, rng);
  p.ff_b1 = Tensor::parameter(1, hidden, std::vector<double>(hidden, 0.0));
  p.ff_w2 = xavier_uniform(hidden, model_dim, rng);
  p.ff_b2 = Tensor::parameter(1, model_dim, std::vector<double>(model_dim, 0.0));
  return p;
}

Tensor transformer_layer(const Tensor& x, const std::optional<Tensor>& condition,
                         const TransformerLayerParams& p) {
  if (x.cols() != p.model_dim) {
    throw DimensionError("transformer_layer: input " + x.shape_str() + " does not match model_dim " +
                         std::to_string(p.model_dim));
  }
  if (condition && !p.cross_attn) {
    throw ConfigError("transformer_layer: condition supplied to a layer built without cross-attention");
  }
  if (!condition && p.cross_attn) {
    throw ConfigError("transformer_layer: layer has cross-attention but no condition was supplied");
  }
  const Tensor xn = layer_norm_rows(x, p.ln1_gain, p.ln1_bias);
  Tensor h = add(x, multi_head_attention(xn, xn, p.self_attn, p.causal_self));
  if (condition) {
    h = add(h, multi_head_attention(layer_norm_rows(h, p.lnx_gain, p.lnx_bias), *condition,
                                    *p.cross_attn, /*causal=*/false));
  }
  const Tensor ff_in = layer_norm_rows(h, p.ln2_gain, p.ln2_bias);
  const Tensor ff = add_rowvec(matmul(gelu(add_rowvec(matmul(ff_in, p.ff_w1), p.ff_b1)), p.ff_w2),
                               p.ff_b2);
  return add(h, ff);
}

ParamSet GateParams::params() {
  ParamSet p;
  p.add("w", w);
  p.add("b", b);
  return p;
}

GateParams make_gate(int dim, RandomStream& rng) {
  GateParams p;
  p.w = xavier_uniform(dim, dim, rng);
  p.b = Tensor::parameter(1, dim, std::vector<double>(dim, 0.0));
  return p;
}

std::pair<Tensor, Tensor> gated_attention(const Tensor& h, const GateParams& p) {
  if (h.cols() != p.w.rows()) {
    throw DimensionError("gated_attention: input " + h.shape_str() + " does not match gate " +
                         p.w.shape_str());
  }
  const Tensor gate = sigmoid(add_rowvec(matmul(h, p.w), p.b));
  return {mul(gate, h), gate};
}

Tensor sinusoidal_positions(int length, int dim) {
  std::vector<double> table(static_cast<std::size_t>(length) * dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int j = 0; j < dim; ++j) {
      const double rate = std::pow(10000.0, -2.0 * (j / 2) / static_cast<double>(dim));
      const double angle = pos * rate;
      table[static_cast<std::size_t>(pos) * dim + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from_rows(length, dim, std::move(table));
}

}  // namespace hydisc
