#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hydisc/datagen.hpp"
#include "hydisc/losses.hpp"
#include "hydisc/models.hpp"
#include "hydisc/params.hpp"

namespace hydisc {

// ---------------------------------------------------------------------------
// Messages and the communications ledger
// ---------------------------------------------------------------------------

enum class MessageKind { text_up, fake_down, disc_down, client_report_up };
const char* to_string(MessageKind k);
MessageKind message_kind_from_string(std::string_view s);  // ParseError on unknown

enum class PayloadClass { feature, parameter, gradient, scalar };
const char* to_string(PayloadClass c);
PayloadClass payload_class_from_string(std::string_view s);  // ParseError on unknown

// The server's id on the simulated wire; clients use their dataset ids.
inline constexpr int kServerId = -1;

// What a payload tensor is, without its numbers: enough for byte accounting
// and for the privacy audit. For gradient payloads, modality/provenance
// describe the tensor that was differentiated.
struct TensorDescriptor {
  PayloadClass payload_class = PayloadClass::scalar;
  std::optional<Modality> modality;
  std::optional<Provenance> provenance;
  int rows = 0, cols = 0;          // 0x0 for multi-tensor parameter bundles
  std::uint64_t elements = 0;      // exact serialized element count
  std::uint64_t content_hash = 0;
  std::string label;
};

struct Message {
  MessageKind kind = MessageKind::text_up;
  int sender = kServerId;
  int receiver = kServerId;
  int round = 0;
  std::vector<TensorDescriptor> payload;
  std::uint64_t parameter_count = 0;  // sum of payload element counts
  std::uint64_t byte_count = 0;       // parameter_count * sizeof(double)
};

// Builds a message and fills in the derived counts.
Message make_message(MessageKind kind, int sender, int receiver, int round,
                     std::vector<TensorDescriptor> payload);

// Append-only record of everything that crossed the simulated wire.
// append() is public so tests can inject synthetic traffic for the auditor.
class CommsLedger {
 public:
  void append(Message m);
  const std::vector<Message>& messages() const { return messages_; }
  std::size_t size() const { return messages_.size(); }

  // Aggregates are always recomputed by folding over the records.
  std::uint64_t total_elements() const;
  std::uint64_t total_elements(MessageKind k) const;
  std::uint64_t round_elements(int round) const;
  std::size_t count(MessageKind k) const;
  int max_round() const;  // -1 when empty

 private:
  std::vector<Message> messages_;
};

// JSON Lines trace: one message per line, payload tensors described (hashed),
// never inlined. import_trace round-trips what export_trace wrote.
void export_trace(const CommsLedger& ledger, const std::string& path);
CommsLedger import_trace(const std::string& path);  // ParseError with line numbers

// ---------------------------------------------------------------------------
// Training state
// ---------------------------------------------------------------------------

// Knobs consumed by the round/stage state machines.
struct ProtocolConfig {
  double lambda_d = 0.1;
  double lambda_g = 0.1;
  double tau = 0.1;
  double lr_g = 2e-4;
  double lr_d = 1e-4;
  double lr_task = 1e-4;
  int batch_size = 32;
  // Contrastive denominators hold negatives only by default; true adds the
  // positive term (the standard form).
  bool contrastive_standard_denominator = false;
  // The fake-feature downlink repeats the conditioning text the client
  // already owns; counted in the ledger by default, a deployment that skips
  // the echo can turn this off (accounting only, results identical).
  bool count_text_echo = true;
  PrivacyScenario scenario = PrivacyScenario::audio_visual_privacy;
  // Route the task-loss gradient through the label-owning clients instead of
  // keeping labels server-side (stricter deployment; adds scalar traffic).
  bool stage2_client_labels = false;
  int classes = 0;  // 0 = regression; 2 = polarity classes; 7 = rounded score classes
};

// Model geometry for everything the server builds.
struct ServerBuild {
  int d_t = 16, d_a = 6, d_v = 8;
  int len_a = 6, len_v = 6;
  int width = 32;
  int gen_audio_layers = 1, gen_audio_heads = 1;
  int gen_visual_layers = 2, gen_visual_heads = 2;
  int disc_audio_layers = 1, disc_audio_heads = 1;
  int disc_visual_layers = 2, disc_visual_heads = 2;
  int msa_audio_layers = 1, msa_audio_heads = 1;
  int msa_visual_layers = 2, msa_visual_heads = 2;
  int classes = 0;
};

struct ServerState {
  std::uint64_t master_seed = 42;
  ServerBuild build;
  int round = 0;  // completed stage-1 rounds
  bool discriminators_frozen = false;
  bool stage2_trained = false;
  GeneratorParams gen_audio, gen_visual;
  DiscriminatorParams disc_audio, disc_visual;
  MsaHeadParams msa;
  AdamState opt_gen_audio, opt_gen_visual;  // stage-1 generator optimizers

  ServerState() = default;
  ServerState(const ServerState&) = delete;  // tensors are shared handles
  ServerState& operator=(const ServerState&) = delete;
  ServerState(ServerState&&) = default;
  ServerState& operator=(ServerState&&) = default;
};

ServerState make_server(std::uint64_t seed, const ServerBuild& build);

// Combined fingerprint of both global discriminators (frozen-stage checks).
std::uint64_t discriminator_fingerprint(const ServerState& server);

// Client-side state that persists across rounds: the optimizer moments for
// the local discriminator copies.
struct ClientState {
  int client_id = -1;
  AdamState opt_disc_audio;
  AdamState opt_disc_visual;
};

// ---------------------------------------------------------------------------
// Stage 1: one collaborative cGAN round
// ---------------------------------------------------------------------------

struct RoundLossRecord {
  int round = 0;
  int client_id = -1;
  Modality modality = Modality::audio;
  LossReport losses;
};

// One full round: select S train clients; send global discriminators down;
// text features up; server generates fake sequences; fakes (plus the text
// echo) down; each client trains its local discriminator copies one Adam
// step on (1-lambda_D) L_D + lambda_D L_real and reports L_G / L_fake plus
// the updated parameters; the server steps each generator once on the mean
// of (1-lambda_G) L_G + lambda_G L_fake across the S reports and replaces
// the global discriminators with the parameter-wise mean of the reports.
//
// Client work is order-independent: `execution_order` (a permutation of the
// selected ids, tests only) must not change any result bit. On any client
// failure the round throws and leaves server, clients, and ledger untouched.
// `client_disc_reports`, when given, receives the updated discriminator
// bundles exactly as reported (ascending client id; audio then visual per
// client) so callers can verify the aggregation independently.
std::vector<RoundLossRecord> run_cgan_round(ServerState& server, const Federation& fed,
                                            std::map<int, ClientState>& clients, int S,
                                            const ProtocolConfig& cfg, CommsLedger& ledger,
                                            const std::vector<int>* execution_order = nullptr,
                                            std::vector<ParamBundle>* client_disc_reports = nullptr);

// ---------------------------------------------------------------------------
// Stage 2: task training with frozen discriminators
// ---------------------------------------------------------------------------

enum class Stage2Features {
  generated,  // private modalities come from the generators (the protocol)
  real,       // oracle/upper-bound run; requires a scenario that shares them
};

struct Stage2Result {
  std::vector<double> epoch_loss;  // mean task loss per epoch
  int batches_run = 0;
};

// Minibatch training of the fusion head (at lr_task) plus fine-tuning of the
// generators actually used (at lr_g). Discriminators must be frozen first
// and are verified bit-identical across the stage. Labels stay server-side
// unless cfg.stage2_client_labels routes per-sample loss gradients through
// the owning clients (scalar traffic in the ledger).
Stage2Result train_stage2(ServerState& server, const Federation& fed, int epochs,
                          const ProtocolConfig& cfg, CommsLedger& ledger,
                          Stage2Features features = Stage2Features::generated);

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

struct InferenceResult {
  Tensor prediction;  // 1x1 regression score or 1xK probabilities
  MsaOutput detail;   // gates for activation dumps
  bool trained = false;
};

// Server-only: generates both private modalities from text and runs the
// fusion head. Takes no ledger because no message exists to record.
InferenceResult infer(const ServerState& server, const FeatureSequence& text, NoiseSeed noise);

struct EvalPrediction {
  int client_id = -1;
  int sample_index = 0;
  double y_true = 0.0;
  double y_hat = 0.0;
};

// Predictions over a split, substituting real features for modalities the
// scenario shares (matching how stage 2 trained) and generating the rest.
std::vector<EvalPrediction> evaluate_split(const ServerState& server, const Federation& fed,
                                           Split split, const ProtocolConfig& cfg);

// ---------------------------------------------------------------------------
// Communication accounting
// ---------------------------------------------------------------------------

struct CommsSummary {
  int rounds = 0;
  std::uint64_t total_elements = 0;        // ledger fold
  std::uint64_t text_up_elements = 0;
  std::uint64_t fake_down_elements = 0;
  std::uint64_t disc_down_elements = 0;
  std::uint64_t report_up_elements = 0;
  std::uint64_t disc_exchange_elements = 0;  // parameter payloads both ways
  std::uint64_t closed_form_elements = 0;    // formula prediction (must match fold)
  std::uint64_t per_round_disc_exchange = 0;  // 2 * S * (|D_a| + |D_v|)
  std::string formula;
};

// Recomputes totals from the records and checks them against the closed-form
// count derived from the geometry (discriminator sizes, per-client sample
// counts, sequence dims, echo flag). Mismatch raises ContractError; the
// ledger passed in must contain stage-1 traffic only.
CommsSummary comms_summary(const CommsLedger& ledger, const Federation& fed,
                           const ServerState& server, const ProtocolConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct TrainingRuntime {
  ServerState server;
  std::map<int, ClientState> clients;
};

// Binary container: geometry, server models, optimizer moments, and the
// per-client optimizer states, so interrupted stage-1 runs resume exactly.
std::vector<std::uint8_t> serialize_checkpoint(const TrainingRuntime& rt);
TrainingRuntime load_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint_file(const TrainingRuntime& rt, const std::string& path);
TrainingRuntime load_checkpoint_file(const std::string& path);

}  // namespace hydisc
