#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "hydisc/blocks.hpp"
#include "hydisc/features.hpp"
#include "hydisc/optim.hpp"
#include "hydisc/rng.hpp"

namespace hydisc {

// Deterministic handle for the z_0 noise vector: the same seed always yields
// the same draw, independent of call order.
struct NoiseSeed {
  std::uint64_t value = 0;
};

struct ModelShape {
  int feature_dim = 0;  // d* of the modality being generated/judged
  int cond_dim = 0;     // width of the conditioning text features
  int width = 0;        // internal model width
  int layers = 1;
  int heads = 1;
};

// Autoregressive conditional generator: embeds the running prefix, applies
// causal self-attention plus cross-attention over the text sequence, and
// projects the last hidden state to the next feature vector.
struct GeneratorParams {
  ModelShape shape;
  Tensor w_in, b_in;    // feature_dim -> width
  std::vector<TransformerLayerParams> layers;
  Tensor lnf_gain, lnf_bias;
  Tensor w_out, b_out;  // width -> feature_dim

  ParamSet params();
};

GeneratorParams make_generator(Modality m, const ModelShape& shape, RandomStream& rng);

// Free-running generation: z_0 = mu ~ N(0, I) from the seed, then length
// body vectors and one final <CLS> vector, each conditioned on the prefix
// z_{0..i-1} and the text sequence. mu itself is not part of the output.
FeatureSequence generate_sequence(const GeneratorParams& g, Modality m,
                                  const FeatureSequence& text, NoiseSeed seed, int length);

// Re-runs a single generation step from an explicit prefix (rows begin with
// z_0). Used to validate the prefix-replay property.
Tensor generate_step(const GeneratorParams& g, const Tensor& prefix, const FeatureSequence& text);

// Same stack as the generator plus a per-position realness head. One causal
// pass scores all prefixes: score i reflects positions 0..i of the input.
struct DiscriminatorParams {
  ModelShape shape;
  Tensor w_in, b_in;
  std::vector<TransformerLayerParams> layers;
  Tensor lnf_gain, lnf_bias;
  Tensor w_cls, b_cls;  // width -> 1

  ParamSet params();
};

DiscriminatorParams make_discriminator(Modality m, const ModelShape& shape, RandomStream& rng);

struct DiscOutput {
  // (L+1) x 1 realness probabilities, clamped to (1e-7, 1 - 1e-7).
  Tensor scores;
  // Final hidden state at the <CLS> position (1 x width). The contrastive
  // regularizers operate on this representation.
  Tensor cls_hidden;
};

DiscOutput discriminate(const DiscriminatorParams& d, const FeatureSequence& seq,
                        const FeatureSequence& text);

// Fusion head: per non-text modality a plain (bidirectional) transformer
// stack over [body; cls], gate on the final <CLS> row; the text <CLS> is
// gated directly. Fused order is [visual : text : audio].
struct MsaHeadShape {
  int text_dim = 0;
  int audio_dim = 0;
  int visual_dim = 0;
  int audio_layers = 1;
  int audio_heads = 1;
  int visual_layers = 2;
  int visual_heads = 2;
  int classes = 0;  // 0 = regression (scalar output clamped to [-3, 3])
};

struct MsaHeadParams {
  MsaHeadShape shape;
  std::vector<TransformerLayerParams> audio_stack;
  std::vector<TransformerLayerParams> visual_stack;
  GateParams gate_t, gate_a, gate_v;
  Tensor w_pred, b_pred;

  ParamSet params();
};

MsaHeadParams make_msa_head(const MsaHeadShape& shape, RandomStream& rng);

struct MsaOutput {
  // Regression: 1x1 prediction in [-3, 3]. Classification: 1xK probabilities.
  Tensor prediction;
  Tensor gate_text, gate_audio, gate_visual;
};

MsaOutput msa_forward(const MsaHeadParams& head, const Tensor& text_cls,
                      const FeatureSequence& audio, const FeatureSequence& visual);

}  // namespace hydisc
