#pragma once

#include <cstdint>
#include <string>

#include "hydisc/datagen.hpp"
#include "hydisc/protocol.hpp"

namespace hydisc {

// Everything a training run needs, resolvable from defaults, then a config
// file, then command-line flags (flag > file > default). `s_per_round = 0`
// means "pick the preset default" (10 for mosi-family datasets, 5 for
// mosei-family, capped at the number of training clients).
struct TrainConfig {
  double lambda_d = 0.1;
  double lambda_g = 0.1;
  double tau = 0.1;
  int rounds = 100;        // stage-1 rounds (one selection + barrier each)
  int s_per_round = 0;     // clients per round; 0 = dataset default
  int batch_size = 32;
  int stage2_epochs = 20;
  double lr_g = 2e-4;
  double lr_d = 1e-4;
  double lr_task = 1e-4;
  int width = 32;
  int gen_audio_layers = 1, gen_audio_heads = 1;
  int gen_visual_layers = 2, gen_visual_heads = 2;
  int disc_audio_layers = 1, disc_audio_heads = 1;
  int disc_visual_layers = 2, disc_visual_heads = 2;
  int msa_audio_layers = 1, msa_audio_heads = 1;
  int msa_visual_layers = 2, msa_visual_heads = 2;
  int classes = 0;  // 0 = regression, else 2 or 7
  std::string scenario = "audio-visual-privacy";
  std::uint64_t seed = 42;
  std::string dataset = "preset:mosi-toy";  // preset:NAME or file:PATH
  bool contrastive_standard_denominator = false;
  bool count_text_echo = true;
  bool stage2_client_labels = false;
};

// Reads a flat key=value file ('#' starts a comment; keys match the struct
// field names). Unknown keys, malformed lines, and out-of-range values raise
// ConfigError naming the file, line, and key.
void apply_config_file(TrainConfig& cfg, const std::string& path);

// Range checks every field (same rules the file parser applies), for configs
// assembled from flags. Throws ConfigError naming the offending field.
void validate(const TrainConfig& cfg);

// Loads the federation named by `cfg.dataset` (preset:NAME generates one,
// file:PATH ingests a feature dump).
Federation load_dataset(const TrainConfig& cfg);

// The S actually used: the explicit value, or the dataset-family default
// capped at the training-client count.
int resolve_s(const TrainConfig& cfg, const Federation& fed);

// Protocol- and model-level views of the same configuration.
ProtocolConfig protocol_config(const TrainConfig& cfg);
ServerBuild server_build(const TrainConfig& cfg, const Federation& fed);

// Single source for the code version stamped into run manifests.
std::string version_string();

// Serializes the fully-resolved config back to the key=value schema (used in
// run manifests so a run can be reproduced from its artifacts alone).
std::string render_config(const TrainConfig& cfg);

}  // namespace hydisc
