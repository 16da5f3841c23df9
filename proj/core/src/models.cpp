#include "hydisc/models.hpp"

#include <cmath>

namespace hydisc {

namespace {

Tensor zero_row(int n) { return Tensor::parameter(1, n, std::vector<double>(n, 0.0)); }
Tensor one_row(int n) { return Tensor::parameter(1, n, std::vector<double>(n, 1.0)); }

void check_shape(const ModelShape& s, const char* what) {
  if (s.feature_dim <= 0 || s.cond_dim <= 0 || s.width <= 0 || s.layers <= 0 || s.heads <= 0) {
    throw ConfigError(std::string(what) + ": all shape fields must be positive");
  }
  if (s.width % s.heads != 0) {
    throw ConfigError(std::string(what) + ": width " + std::to_string(s.width) +
                      " is not divisible by heads " + std::to_string(s.heads));
  }
}

// Embed, add positions, run the conditional stack, final layer norm.
Tensor run_stack(const Tensor& input, const FeatureSequence& text, const Tensor& w_in,
                 const Tensor& b_in, const std::vector<TransformerLayerParams>& layers,
                 const Tensor& lnf_gain, const Tensor& lnf_bias) {
  Tensor h = add_rowvec(matmul(input, w_in), b_in);
  h = add(h, sinusoidal_positions(h.rows(), h.cols()));
  const std::optional<Tensor> cond(text.body());
  for (const TransformerLayerParams& layer : layers) {
    h = transformer_layer(h, cond, layer);
  }
  return layer_norm_rows(h, lnf_gain, lnf_bias);
}

}  // namespace

ParamSet GeneratorParams::params() {
  ParamSet p;
  p.add("w_in", w_in);
  p.add("b_in", b_in);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    p.extend(layers[i].params(), "layers." + std::to_string(i) + ".");
  }
  p.add("lnf.gain", lnf_gain);
  p.add("lnf.bias", lnf_bias);
  p.add("w_out", w_out);
  p.add("b_out", b_out);
  return p;
}

GeneratorParams make_generator(Modality m, const ModelShape& shape, RandomStream& rng) {
  if (m == Modality::text) throw ConfigError("make_generator: text is the shared modality, not generated");
  check_shape(shape, "make_generator");
  GeneratorParams g;
  g.shape = shape;
  g.w_in = xavier_uniform(shape.feature_dim, shape.width, rng);
  g.b_in = zero_row(shape.width);
  g.layers.reserve(shape.layers);
  for (int i = 0; i < shape.layers; ++i) {
    g.layers.push_back(
        make_transformer_layer(shape.width, shape.heads, /*causal_self=*/true, shape.cond_dim, rng));
  }
  g.lnf_gain = one_row(shape.width);
  g.lnf_bias = zero_row(shape.width);
  g.w_out = xavier_uniform(shape.width, shape.feature_dim, rng);
  g.b_out = zero_row(shape.feature_dim);
  return g;
}

Tensor generate_step(const GeneratorParams& g, const Tensor& prefix, const FeatureSequence& text) {
  if (prefix.cols() != g.shape.feature_dim) {
    throw DimensionError("generate_step: prefix " + prefix.shape_str() +
                         " does not match feature_dim " + std::to_string(g.shape.feature_dim));
  }
  const Tensor h = run_stack(prefix, text, g.w_in, g.b_in, g.layers, g.lnf_gain, g.lnf_bias);
  return add_rowvec(matmul(row_at(h, h.rows() - 1), g.w_out), g.b_out);
}

FeatureSequence generate_sequence(const GeneratorParams& g, Modality m,
                                  const FeatureSequence& text, NoiseSeed seed, int length) {
  if (length <= 0) throw ContractError("generate_sequence: length must be positive");
  if (text.modality() != Modality::text) {
    throw ContractError("generate_sequence: condition must be the text sequence");
  }
  if (text.dim() != g.shape.cond_dim) {
    throw DimensionError("generate_sequence: text dim " + std::to_string(text.dim()) +
                         " does not match cond_dim " + std::to_string(g.shape.cond_dim));
  }
  const int d = g.shape.feature_dim;
  RandomStream noise(seed.value);
  std::vector<double> mu(d);
  for (double& v : mu) v = noise.next_gaussian();
  Tensor prefix = Tensor::row(std::move(mu));  // z_0, never emitted

  std::vector<Tensor> emitted;
  emitted.reserve(length + 1);
  for (int i = 0; i < length + 1; ++i) {
    Tensor z = generate_step(g, prefix, text);
    emitted.push_back(z);
    if (i < length) {
      const Tensor parts[] = {prefix, z};
      prefix = concat_rows(parts);
    }
  }
  Tensor body = concat_rows(std::span<const Tensor>(emitted.data(), length));
  return FeatureSequence::fake(m, std::move(body), emitted.back());
}

ParamSet DiscriminatorParams::params() {
  ParamSet p;
  p.add("w_in", w_in);
  p.add("b_in", b_in);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    p.extend(layers[i].params(), "layers." + std::to_string(i) + ".");
  }
  p.add("lnf.gain", lnf_gain);
  p.add("lnf.bias", lnf_bias);
  p.add("w_cls", w_cls);
  p.add("b_cls", b_cls);
  return p;
}

DiscriminatorParams make_discriminator(Modality m, const ModelShape& shape, RandomStream& rng) {
  if (m == Modality::text) throw ConfigError("make_discriminator: text is never discriminated");
  check_shape(shape, "make_discriminator");
  DiscriminatorParams d;
  d.shape = shape;
  d.w_in = xavier_uniform(shape.feature_dim, shape.width, rng);
  d.b_in = zero_row(shape.width);
  d.layers.reserve(shape.layers);
  for (int i = 0; i < shape.layers; ++i) {
    d.layers.push_back(
        make_transformer_layer(shape.width, shape.heads, /*causal_self=*/true, shape.cond_dim, rng));
  }
  d.lnf_gain = one_row(shape.width);
  d.lnf_bias = zero_row(shape.width);
  d.w_cls = xavier_uniform(shape.width, 1, rng);
  d.b_cls = zero_row(1);
  return d;
}

DiscOutput discriminate(const DiscriminatorParams& d, const FeatureSequence& seq,
                        const FeatureSequence& text) {
  if (seq.dim() != d.shape.feature_dim) {
    throw DimensionError("discriminate: sequence dim " + std::to_string(seq.dim()) +
                         " does not match feature_dim " + std::to_string(d.shape.feature_dim));
  }
  if (text.dim() != d.shape.cond_dim) {
    throw DimensionError("discriminate: text dim " + std::to_string(text.dim()) +
                         " does not match cond_dim " + std::to_string(d.shape.cond_dim));
  }
  const Tensor input = seq.with_cls();  // (L+1) x d, <CLS> last
  const Tensor h = run_stack(input, text, d.w_in, d.b_in, d.layers, d.lnf_gain, d.lnf_bias);
  const Tensor logits = add_rowvec(matmul(h, d.w_cls), d.b_cls);
  DiscOutput out;
  out.scores = clamp(sigmoid(logits), 1e-7, 1.0 - 1e-7);
  out.cls_hidden = row_at(h, h.rows() - 1);
  return out;
}

ParamSet MsaHeadParams::params() {
  ParamSet p;
  for (std::size_t i = 0; i < audio_stack.size(); ++i) {
    p.extend(audio_stack[i].params(), "audio." + std::to_string(i) + ".");
  }
  for (std::size_t i = 0; i < visual_stack.size(); ++i) {
    p.extend(visual_stack[i].params(), "visual." + std::to_string(i) + ".");
  }
  p.extend(gate_t.params(), "gate_t.");
  p.extend(gate_a.params(), "gate_a.");
  p.extend(gate_v.params(), "gate_v.");
  p.add("w_pred", w_pred);
  p.add("b_pred", b_pred);
  return p;
}

MsaHeadParams make_msa_head(const MsaHeadShape& shape, RandomStream& rng) {
  if (shape.text_dim <= 0 || shape.audio_dim <= 0 || shape.visual_dim <= 0) {
    throw ConfigError("make_msa_head: modality dims must be positive");
  }
  if (shape.audio_dim % shape.audio_heads != 0) {
    throw ConfigError("make_msa_head: audio_dim " + std::to_string(shape.audio_dim) +
                      " is not divisible by audio_heads " + std::to_string(shape.audio_heads));
  }
  if (shape.visual_dim % shape.visual_heads != 0) {
    throw ConfigError("make_msa_head: visual_dim " + std::to_string(shape.visual_dim) +
                      " is not divisible by visual_heads " + std::to_string(shape.visual_heads));
  }
  MsaHeadParams head;
  head.shape = shape;
  for (int i = 0; i < shape.audio_layers; ++i) {
    head.audio_stack.push_back(make_transformer_layer(shape.audio_dim, shape.audio_heads,
                                                      /*causal_self=*/false, std::nullopt, rng));
  }
  for (int i = 0; i < shape.visual_layers; ++i) {
    head.visual_stack.push_back(make_transformer_layer(shape.visual_dim, shape.visual_heads,
                                                       /*causal_self=*/false, std::nullopt, rng));
  }
  head.gate_t = make_gate(shape.text_dim, rng);
  head.gate_a = make_gate(shape.audio_dim, rng);
  head.gate_v = make_gate(shape.visual_dim, rng);
  const int fused = shape.visual_dim + shape.text_dim + shape.audio_dim;
  const int out_dim = shape.classes > 0 ? shape.classes : 1;
  // The predictor starts at zero so the untrained head is neutral (prediction 0,
  // uniform class probabilities) and the first optimizer step aligns every
  // coordinate with the task signal instead of fighting a random projection.
  head.w_pred = Tensor::parameter(
      fused, out_dim, std::vector<double>(static_cast<std::size_t>(fused) * out_dim, 0.0));
  head.b_pred = zero_row(out_dim);
  return head;
}

MsaOutput msa_forward(const MsaHeadParams& head, const Tensor& text_cls,
                      const FeatureSequence& audio, const FeatureSequence& visual) {
  if (text_cls.rows() != 1 || text_cls.cols() != head.shape.text_dim) {
    throw DimensionError("msa_forward: text cls " + text_cls.shape_str() + " does not match dim " +
                         std::to_string(head.shape.text_dim));
  }
  if (audio.dim() != head.shape.audio_dim) {
    throw DimensionError("msa_forward: audio dim " + std::to_string(audio.dim()) +
                         " does not match " + std::to_string(head.shape.audio_dim));
  }
  if (visual.dim() != head.shape.visual_dim) {
    throw DimensionError("msa_forward: visual dim " + std::to_string(visual.dim()) +
                         " does not match " + std::to_string(head.shape.visual_dim));
  }

  auto encode = [](const FeatureSequence& seq, const std::vector<TransformerLayerParams>& stack) {
    Tensor h = seq.with_cls();
    for (const TransformerLayerParams& layer : stack) {
      h = transformer_layer(h, std::nullopt, layer);
    }
    return row_at(h, h.rows() - 1);  // encoded <CLS>
  };

  const Tensor a_cls = encode(audio, head.audio_stack);
  const Tensor v_cls = encode(visual, head.visual_stack);

  auto [h_t, g_t] = gated_attention(text_cls, head.gate_t);
  auto [h_a, g_a] = gated_attention(a_cls, head.gate_a);
  auto [h_v, g_v] = gated_attention(v_cls, head.gate_v);

  const Tensor fused_parts[] = {h_v, h_t, h_a};
  const Tensor fused = concat_cols(fused_parts);
  Tensor pred = add_rowvec(matmul(fused, head.w_pred), head.b_pred);
  if (head.shape.classes > 0) {
    pred = softmax_rows(pred);
  } else {
    pred = clamp(pred, -3.0, 3.0);
  }
  MsaOutput out;
  out.prediction = pred;
  out.gate_text = g_t;
  out.gate_audio = g_a;
  out.gate_visual = g_v;
  return out;
}

}  // namespace hydisc
