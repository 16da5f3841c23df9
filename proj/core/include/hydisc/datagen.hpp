#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hydisc/features.hpp"

namespace hydisc {

enum class Split { train, valid, test };
const char* to_string(Split s);
Split split_from_string(std::string_view s);  // ConfigError on unknown name

enum class Polarity { negative, non_negative };
const char* to_string(Polarity p);
// negative iff y < 0; y must lie in [-3, 3].
Polarity polarity(double y);

// Which modalities are private (client-held) vs shareable. Text is always
// shareable; the scenario governs audio and visual.
enum class PrivacyScenario { all_shareable, audio_privacy, visual_privacy, audio_visual_privacy };
const char* to_string(PrivacyScenario s);
PrivacyScenario scenario_from_string(std::string_view s);  // ConfigError on unknown name
bool is_private(PrivacyScenario s, Modality m);

// Capability token for reading private feature bodies. Two forms:
//   - client_local(id): anything owned by that client (on-device compute);
//   - scenario_shared(scenario, m): any client's features of a modality the
//     scenario declares shareable (construction fails for private ones).
class ModalityGrant {
 public:
  static ModalityGrant client_local(int client_id);
  static ModalityGrant scenario_shared(PrivacyScenario s, Modality m);  // AccessError if m private
  bool covers(int owner, Modality m) const;

 private:
  ModalityGrant(int client, std::optional<Modality> m) : client_(client), modality_(m) {}
  int client_ = -1;                    // -1: any client (scenario grant)
  std::optional<Modality> modality_;   // nullopt: any modality (client grant)
};

// A feature sequence whose body is only reachable through a covering grant.
// Shape metadata stays public; the numbers do not.
class PrivateFeature {
 public:
  PrivateFeature(int owner, FeatureSequence seq);
  const FeatureSequence& open(const ModalityGrant& grant) const;  // AccessError on mismatch
  int owner() const { return owner_; }
  Modality modality() const;
  int length() const;
  int dim() const;

 private:
  int owner_;
  FeatureSequence seq_;
};

struct Sample {
  FeatureSequence text;  // shareable in every scenario
  PrivateFeature audio;
  PrivateFeature visual;
  double y = 0.0;  // sentiment score in [-3, 3]
  Polarity label_polarity = Polarity::non_negative;
};

class ClientDataset {
 public:
  ClientDataset(int client_id, Split split, std::vector<Sample> samples);
  int client_id() const { return client_id_; }
  Split split() const { return split_; }
  const std::vector<Sample>& samples() const { return samples_; }
  int size() const { return static_cast<int>(samples_.size()); }

 private:
  int client_id_;
  Split split_;
  std::vector<Sample> samples_;
};

struct SplitSpec {
  int clients = 0;
  int total_samples = 0;
};

struct FederationSpec {
  SplitSpec train;
  SplitSpec valid;
  SplitSpec test;
  int d_t = 16, d_a = 6, d_v = 8;
  int len_t = 6, len_a = 6, len_v = 6;
  double alpha = 10.0;         // polarity-mixture concentration; small => label skew
  double noise_sigma = 0.1;    // per-row observation noise
  double style_sigma = 0.5;    // per-client style offset scale
  bool equal_samples_per_client = false;  // true: near-equal i.i.d. partition
  std::uint64_t seed = 42;
  void validate() const;  // ConfigError naming the offending field
};

struct Federation {
  int d_t = 0, d_a = 0, d_v = 0;
  int len_t = 0, len_a = 0, len_v = 0;
  std::vector<ClientDataset> clients;  // train block, then valid, then test; ids unique
  std::vector<int> client_indices(Split s) const;
  const ClientDataset& client_by_id(int id) const;  // ContractError if unknown
  int total_samples(Split s) const;
};

// Synthetic federation with a known cross-modal generative process:
// per client, a style offset and a polarity mixture; per sample, a latent
// sentiment u drawn from the mixed polarity, text rows around u's direction,
// and audio/visual rows formed from a fixed linear map of the text summary
// plus u's modality direction, the client style, and noise. Label y = u.
Federation make_federation(const FederationSpec& spec);

// Named configurations ("mosi-toy", "mosei-toy", "mosi", "mosei").
// The full presets reproduce the client/sample counts of the two public
// benchmark splits; dims stay at the compact defaults.
FederationSpec preset_spec(const std::string& name);  // ConfigError on unknown name

// Content fingerprint over dims, ids, labels, and every feature value
// (bitwise); equal hashes on independently built federations mean equality.
std::uint64_t federation_hash(const Federation& fed);

// JSON Lines dataset file: header object {dims, lengths, splits, version},
// then one sample per line {client, split, y, text, audio, visual} with
// numbers printed at 17 significant digits (lossless round-trip).
void export_federation(const Federation& fed, const std::string& path);
Federation ingest_features(const std::string& path);  // ParseError with line/record context

}  // namespace hydisc
