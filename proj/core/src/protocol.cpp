#include "hydisc/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <utility>

#include <json.hpp>

#include "hydisc/errors.hpp"
#include "hydisc/rng.hpp"

namespace hydisc {

namespace {
using nlohmann::json;
}

// ---------------------------------------------------------------------------
// Message plumbing
// ---------------------------------------------------------------------------

const char* to_string(MessageKind k) {
  switch (k) {
    case MessageKind::text_up: return "TextUp";
    case MessageKind::fake_down: return "FakeDown";
    case MessageKind::disc_down: return "DiscDown";
    case MessageKind::client_report_up: return "ClientReportUp";
  }
  return "?";
}

MessageKind message_kind_from_string(std::string_view s) {
  if (s == "TextUp") return MessageKind::text_up;
  if (s == "FakeDown") return MessageKind::fake_down;
  if (s == "DiscDown") return MessageKind::disc_down;
  if (s == "ClientReportUp") return MessageKind::client_report_up;
  throw ParseError("unknown message kind: '" + std::string(s) + "'");
}

const char* to_string(PayloadClass c) {
  switch (c) {
    case PayloadClass::feature: return "feature";
    case PayloadClass::parameter: return "parameter";
    case PayloadClass::gradient: return "gradient";
    case PayloadClass::scalar: return "scalar";
  }
  return "?";
}

PayloadClass payload_class_from_string(std::string_view s) {
  if (s == "feature") return PayloadClass::feature;
  if (s == "parameter") return PayloadClass::parameter;
  if (s == "gradient") return PayloadClass::gradient;
  if (s == "scalar") return PayloadClass::scalar;
  throw ParseError("unknown payload class: '" + std::string(s) + "'");
}

Message make_message(MessageKind kind, int sender, int receiver, int round,
                     std::vector<TensorDescriptor> payload) {
  Message m;
  m.kind = kind;
  m.sender = sender;
  m.receiver = receiver;
  m.round = round;
  m.payload = std::move(payload);
  m.parameter_count = 0;
  for (const TensorDescriptor& d : m.payload) m.parameter_count += d.elements;
  m.byte_count = m.parameter_count * sizeof(double);
  return m;
}

void CommsLedger::append(Message m) { messages_.push_back(std::move(m)); }

std::uint64_t CommsLedger::total_elements() const {
  std::uint64_t n = 0;
  for (const Message& m : messages_) n += m.parameter_count;
  return n;
}

std::uint64_t CommsLedger::total_elements(MessageKind k) const {
  std::uint64_t n = 0;
  for (const Message& m : messages_) {
    if (m.kind == k) n += m.parameter_count;
  }
  return n;
}

std::uint64_t CommsLedger::round_elements(int round) const {
  std::uint64_t n = 0;
  for (const Message& m : messages_) {
    if (m.round == round) n += m.parameter_count;
  }
  return n;
}

std::size_t CommsLedger::count(MessageKind k) const {
  std::size_t n = 0;
  for (const Message& m : messages_) {
    if (m.kind == k) ++n;
  }
  return n;
}

int CommsLedger::max_round() const {
  int r = -1;
  for (const Message& m : messages_) r = std::max(r, m.round);
  return r;
}

namespace {

std::string hash_hex(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t hash_values(std::span<const double> xs, std::uint64_t h = fnv1a("tensor")) {
  return fnv1a(xs.data(), xs.size() * sizeof(double), h);
}

TensorDescriptor describe_body(const FeatureSequence& seq, std::string label) {
  TensorDescriptor d;
  d.payload_class = PayloadClass::feature;
  d.modality = seq.modality();
  d.provenance = seq.provenance();
  d.rows = seq.length();
  d.cols = seq.dim();
  d.elements = static_cast<std::uint64_t>(d.rows) * static_cast<std::uint64_t>(d.cols);
  d.content_hash = hash_values(seq.body().values());
  d.label = std::move(label);
  return d;
}

// Fake sequences travel with their generated <CLS> row (not recomputable).
TensorDescriptor describe_with_cls(const FeatureSequence& seq, std::string label) {
  TensorDescriptor d;
  d.payload_class = PayloadClass::feature;
  d.modality = seq.modality();
  d.provenance = seq.provenance();
  d.rows = seq.length() + 1;
  d.cols = seq.dim();
  d.elements = static_cast<std::uint64_t>(d.rows) * static_cast<std::uint64_t>(d.cols);
  d.content_hash = hash_values(seq.cls().values(), hash_values(seq.body().values()));
  d.label = std::move(label);
  return d;
}

TensorDescriptor describe_bundle(const ParamBundle& b, Modality m, std::string label) {
  TensorDescriptor d;
  d.payload_class = PayloadClass::parameter;
  d.modality = m;
  d.rows = 0;
  d.cols = 0;
  d.elements = b.total_elements();
  d.content_hash = b.content_hash();
  d.label = std::move(label);
  return d;
}

TensorDescriptor describe_scalar(double v, std::string label) {
  TensorDescriptor d;
  d.payload_class = PayloadClass::scalar;
  d.rows = 1;
  d.cols = 1;
  d.elements = 1;
  d.content_hash = fnv1a(&v, sizeof(v));
  d.label = std::move(label);
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Trace files
// ---------------------------------------------------------------------------

void export_trace(const CommsLedger& ledger, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  for (const Message& m : ledger.messages()) {
    json j;
    j["kind"] = to_string(m.kind);
    j["sender"] = m.sender;
    j["receiver"] = m.receiver;
    j["round"] = m.round;
    j["parameter_count"] = m.parameter_count;
    j["byte_count"] = m.byte_count;
    json payload = json::array();
    for (const TensorDescriptor& d : m.payload) {
      json p;
      p["class"] = to_string(d.payload_class);
      if (d.modality) p["modality"] = to_string(*d.modality);
      if (d.provenance) p["provenance"] = to_string(*d.provenance);
      p["rows"] = d.rows;
      p["cols"] = d.cols;
      p["elements"] = d.elements;
      p["hash"] = hash_hex(d.content_hash);
      p["label"] = d.label;
      payload.push_back(std::move(p));
    }
    j["payload"] = std::move(payload);
    out << j.dump() << '\n';
  }
  if (!out) throw ParseError("write to '" + path + "' failed");
}

CommsLedger import_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open trace file '" + path + "'");
  CommsLedger ledger;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    try {
      std::vector<TensorDescriptor> payload;
      for (const json& p : j.at("payload")) {
        TensorDescriptor d;
        d.payload_class = payload_class_from_string(p.at("class").get<std::string>());
        if (p.contains("modality")) {
          const std::string ms = p.at("modality").get<std::string>();
          if (ms == "text") d.modality = Modality::text;
          else if (ms == "audio") d.modality = Modality::audio;
          else if (ms == "visual") d.modality = Modality::visual;
          else throw ParseError("unknown modality '" + ms + "'");
        }
        if (p.contains("provenance")) {
          const std::string ps = p.at("provenance").get<std::string>();
          if (ps == "real") d.provenance = Provenance::real;
          else if (ps == "fake") d.provenance = Provenance::fake;
          else throw ParseError("unknown provenance '" + ps + "'");
        }
        d.rows = p.at("rows").get<int>();
        d.cols = p.at("cols").get<int>();
        d.elements = p.at("elements").get<std::uint64_t>();
        d.content_hash = std::stoull(p.at("hash").get<std::string>(), nullptr, 16);
        d.label = p.at("label").get<std::string>();
        payload.push_back(std::move(d));
      }
      Message m = make_message(message_kind_from_string(j.at("kind").get<std::string>()),
                               j.at("sender").get<int>(), j.at("receiver").get<int>(),
                               j.at("round").get<int>(), std::move(payload));
      if (m.parameter_count != j.at("parameter_count").get<std::uint64_t>()) {
        throw ParseError("parameter_count does not match the payload descriptors");
      }
      ledger.append(std::move(m));
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": bad message record: " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return ledger;
}

// ---------------------------------------------------------------------------
// Server construction
// ---------------------------------------------------------------------------

namespace {

void validate_build(const ServerBuild& b) {
  auto pos = [](const char* name, int v) {
    if (v < 1) throw ConfigError(std::string(name) + " must be >= 1, got " + std::to_string(v));
  };
  pos("d_t", b.d_t);
  pos("d_a", b.d_a);
  pos("d_v", b.d_v);
  pos("len_a", b.len_a);
  pos("len_v", b.len_v);
  pos("width", b.width);
  pos("gen_audio_layers", b.gen_audio_layers);
  pos("gen_audio_heads", b.gen_audio_heads);
  pos("gen_visual_layers", b.gen_visual_layers);
  pos("gen_visual_heads", b.gen_visual_heads);
  pos("disc_audio_layers", b.disc_audio_layers);
  pos("disc_audio_heads", b.disc_audio_heads);
  pos("disc_visual_layers", b.disc_visual_layers);
  pos("disc_visual_heads", b.disc_visual_heads);
  pos("msa_audio_layers", b.msa_audio_layers);
  pos("msa_audio_heads", b.msa_audio_heads);
  pos("msa_visual_layers", b.msa_visual_layers);
  pos("msa_visual_heads", b.msa_visual_heads);
  if (b.classes != 0 && b.classes != 2 && b.classes != 7) {
    throw ConfigError("classes must be 0 (regression), 2, or 7, got " + std::to_string(b.classes));
  }
}

}  // namespace

ServerState make_server(std::uint64_t seed, const ServerBuild& build) {
  validate_build(build);
  ServerState s;
  s.master_seed = seed;
  s.build = build;
  const ModelShape gen_a{build.d_a, build.d_t, build.width, build.gen_audio_layers, build.gen_audio_heads};
  const ModelShape gen_v{build.d_v, build.d_t, build.width, build.gen_visual_layers, build.gen_visual_heads};
  const ModelShape disc_a{build.d_a, build.d_t, build.width, build.disc_audio_layers, build.disc_audio_heads};
  const ModelShape disc_v{build.d_v, build.d_t, build.width, build.disc_visual_layers, build.disc_visual_heads};
  {
    RandomStream r(derive_seed(seed, "init", 0));
    s.gen_audio = make_generator(Modality::audio, gen_a, r);
  }
  {
    RandomStream r(derive_seed(seed, "init", 1));
    s.gen_visual = make_generator(Modality::visual, gen_v, r);
  }
  {
    RandomStream r(derive_seed(seed, "init", 2));
    s.disc_audio = make_discriminator(Modality::audio, disc_a, r);
  }
  {
    RandomStream r(derive_seed(seed, "init", 3));
    s.disc_visual = make_discriminator(Modality::visual, disc_v, r);
  }
  {
    MsaHeadShape hs;
    hs.text_dim = build.d_t;
    hs.audio_dim = build.d_a;
    hs.visual_dim = build.d_v;
    hs.audio_layers = build.msa_audio_layers;
    hs.audio_heads = build.msa_audio_heads;
    hs.visual_layers = build.msa_visual_layers;
    hs.visual_heads = build.msa_visual_heads;
    hs.classes = build.classes;
    RandomStream r(derive_seed(seed, "init", 4));
    s.msa = make_msa_head(hs, r);
  }
  return s;
}

std::uint64_t discriminator_fingerprint(const ServerState& server) {
  DiscriminatorParams da = server.disc_audio;  // copies share the leaf tensors
  DiscriminatorParams dv = server.disc_visual;
  const std::uint64_t ha = snapshot(da.params()).content_hash();
  const std::uint64_t hv = snapshot(dv.params()).content_hash();
  std::uint64_t h = fnv1a("disc-fingerprint");
  h = fnv1a(&ha, sizeof(ha), h);
  h = fnv1a(&hv, sizeof(hv), h);
  return h;
}

// ---------------------------------------------------------------------------
// Stage 1 round
// ---------------------------------------------------------------------------

namespace {

DiscriminatorParams clone_discriminator(const DiscriminatorParams& src, Modality m,
                                        const ParamBundle& values) {
  RandomStream dummy(0);
  DiscriminatorParams dst = make_discriminator(m, src.shape, dummy);
  ParamSet ps = dst.params();
  restore(ps, values);
  return dst;
}

// One Adam update computed from the gradients on `src` (graph leaves) but
// applied to the detached values in `bundle`, leaving the leaves at their
// pre-step values for later backward passes through the same graph.
void step_detached(const ParamSet& src, ParamBundle& bundle, AdamState& st) {
  if (bundle.entries.size() != src.count()) {
    throw ContractError("step_detached: bundle entry count differs from parameter count");
  }
  ParamSet tmp;
  for (std::size_t i = 0; i < src.count(); ++i) {
    const Tensor& g = src.tensor(i);
    ParamBundle::Entry& e = bundle.entries[i];
    Tensor t = Tensor::parameter(e.rows, e.cols, e.data);
    if (g.has_grad()) {
      std::span<double> dst = t.leaf_grad();
      std::span<const double> gs = g.grad();
      std::copy(gs.begin(), gs.end(), dst.begin());
    }
    tmp.add(src.name(i), t);
  }
  adam_step(tmp, st);
  for (std::size_t i = 0; i < src.count(); ++i) {
    std::span<const double> vals = tmp.tensor(i).values();
    bundle.entries[i].data.assign(vals.begin(), vals.end());
  }
}

struct ModalityWork {
  Tensor combined_g;         // (1-lambda_G) L_G + lambda_G L_fake, pre-update D
  ParamBundle updated_disc;  // after the local step
  AdamState opt_after;       // client optimizer state to commit at the barrier
  LossReport report;
};

ModalityWork modality_phase(const ClientDataset& ds, const ModalityGrant& grant, Modality m,
                            const DiscriminatorParams& global_disc, const ParamBundle& global_bundle,
                            const std::vector<FeatureSequence>& fakes, const ProtocolConfig& cfg,
                            AdamState opt, std::uint64_t master, int round) {
  const int n = ds.size();
  DiscriminatorParams d = clone_discriminator(global_disc, m, global_bundle);
  ParamSet dset = d.params();

  std::vector<DiscOutput> real_out;
  std::vector<DiscOutput> fake_out;
  real_out.reserve(static_cast<std::size_t>(n));
  fake_out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Sample& s = ds.samples()[static_cast<std::size_t>(i)];
    const FeatureSequence& real =
        (m == Modality::audio) ? s.audio.open(grant) : s.visual.open(grant);
    real_out.push_back(discriminate(d, real, s.text));
    fake_out.push_back(discriminate(d, fakes[static_cast<std::size_t>(i)], s.text));
  }

  Tensor l_d;
  for (int i = 0; i < n; ++i) {
    const Tensor term = loss_discriminator(real_out[static_cast<std::size_t>(i)].scores,
                                           fake_out[static_cast<std::size_t>(i)].scores);
    l_d = l_d.defined() ? add(l_d, term) : term;
  }
  l_d = scale(l_d, 1.0 / static_cast<double>(n));

  // Real-Real contrast: one random same-polarity positive per anchor, all
  // opposite-polarity samples on this client as negatives.
  RandomStream pos_rs(derive_seed(master, m == Modality::audio ? "positive-audio" : "positive-visual",
                                  static_cast<std::uint64_t>(round),
                                  static_cast<std::uint64_t>(ds.client_id())));
  LossReport report;
  Tensor l_real_sum;
  for (int i = 0; i < n; ++i) {
    std::vector<int> same;
    std::vector<int> opposite;
    const Polarity pol = ds.samples()[static_cast<std::size_t>(i)].label_polarity;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if (ds.samples()[static_cast<std::size_t>(j)].label_polarity == pol) same.push_back(j);
      else opposite.push_back(j);
    }
    if (same.empty() || opposite.empty()) {
      ++report.real_skipped;
      continue;
    }
    const int j = same[pos_rs.next_index(same.size())];
    std::vector<Tensor> negatives;
    negatives.reserve(opposite.size());
    for (int k : opposite) negatives.push_back(real_out[static_cast<std::size_t>(k)].cls_hidden);
    const Tensor term = loss_real_contrastive(real_out[static_cast<std::size_t>(i)].cls_hidden,
                                              real_out[static_cast<std::size_t>(j)].cls_hidden,
                                              negatives, cfg.tau,
                                              cfg.contrastive_standard_denominator);
    l_real_sum = l_real_sum.defined() ? add(l_real_sum, term) : term;
    ++report.real_counted;
  }
  std::optional<Tensor> l_real;
  if (report.real_counted > 0) {
    l_real = scale(l_real_sum, 1.0 / static_cast<double>(report.real_counted));
  }

  const Tensor combined_d = combine_discriminator(l_d, l_real, cfg.lambda_d);
  dset.zero_grads();
  combined_d.backward();

  ParamBundle updated = snapshot(dset);
  opt.lr = cfg.lr_d;
  step_detached(dset, updated, opt);

  // Generator-side losses against the pre-update discriminator copy.
  Tensor l_g;
  for (int i = 0; i < n; ++i) {
    const Tensor term = loss_generator(fake_out[static_cast<std::size_t>(i)].scores);
    l_g = l_g.defined() ? add(l_g, term) : term;
  }
  l_g = scale(l_g, 1.0 / static_cast<double>(n));

  // Real-Fake contrast: each fake <CLS> against its own real <CLS>, with the
  // client's other fakes as the denominator set.
  Tensor l_fake_sum;
  for (int i = 0; i < n; ++i) {
    std::vector<Tensor> others;
    others.reserve(static_cast<std::size_t>(n) - 1);
    for (int j = 0; j < n; ++j) {
      if (j != i) others.push_back(fake_out[static_cast<std::size_t>(j)].cls_hidden);
    }
    if (others.empty()) {
      ++report.fake_skipped;
      continue;
    }
    const Tensor term = loss_fake_contrastive(fake_out[static_cast<std::size_t>(i)].cls_hidden,
                                              real_out[static_cast<std::size_t>(i)].cls_hidden,
                                              others, cfg.tau,
                                              cfg.contrastive_standard_denominator);
    l_fake_sum = l_fake_sum.defined() ? add(l_fake_sum, term) : term;
    ++report.fake_counted;
  }
  std::optional<Tensor> l_fake;
  if (report.fake_counted > 0) {
    l_fake = scale(l_fake_sum, 1.0 / static_cast<double>(report.fake_counted));
  }

  ModalityWork work;
  work.combined_g = combine_generator(l_g, l_fake, cfg.lambda_g);
  work.updated_disc = std::move(updated);
  work.opt_after = std::move(opt);
  work.report.l_g = l_g.item();
  work.report.l_d = l_d.item();
  work.report.l_real = l_real ? l_real->item() : 0.0;
  work.report.l_fake = l_fake ? l_fake->item() : 0.0;
  work.report.real_counted = report.real_counted;
  work.report.real_skipped = report.real_skipped;
  work.report.fake_counted = report.fake_counted;
  work.report.fake_skipped = report.fake_skipped;
  return work;
}

struct ClientWork {
  ModalityWork audio;
  ModalityWork visual;
  Message msg_disc_down, msg_text_up, msg_fake_down, msg_report;
};

ClientWork client_phase(ServerState& server, const Federation& fed, int id, int round,
                        const ProtocolConfig& cfg, const ParamBundle& global_a,
                        const ParamBundle& global_v, AdamState opt_a, AdamState opt_v) {
  const ClientDataset& ds = fed.client_by_id(id);
  if (ds.split() != Split::train) {
    throw ContractError("run_cgan_round: client " + std::to_string(id) + " is not a training client");
  }
  const ModalityGrant grant = ModalityGrant::client_local(id);
  const int n = ds.size();

  ClientWork w;
  w.msg_disc_down = make_message(
      MessageKind::disc_down, kServerId, id, round,
      {describe_bundle(global_a, Modality::audio, "disc_audio.params"),
       describe_bundle(global_v, Modality::visual, "disc_visual.params")});

  std::vector<TensorDescriptor> text_payload;
  text_payload.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    text_payload.push_back(describe_body(ds.samples()[static_cast<std::size_t>(i)].text,
                                         "sample" + std::to_string(i) + ".text"));
  }
  w.msg_text_up = make_message(MessageKind::text_up, id, kServerId, round, std::move(text_payload));

  // Server-side generation, recorded so the barrier can differentiate it.
  std::vector<FeatureSequence> fake_a, fake_v;
  fake_a.reserve(static_cast<std::size_t>(n));
  fake_v.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Sample& s = ds.samples()[static_cast<std::size_t>(i)];
    fake_a.push_back(generate_sequence(
        server.gen_audio, Modality::audio, s.text,
        NoiseSeed{derive_seed(server.master_seed, "noise-audio", static_cast<std::uint64_t>(round),
                              static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(i))},
        fed.len_a));
    fake_v.push_back(generate_sequence(
        server.gen_visual, Modality::visual, s.text,
        NoiseSeed{derive_seed(server.master_seed, "noise-visual", static_cast<std::uint64_t>(round),
                              static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(i))},
        fed.len_v));
  }

  std::vector<TensorDescriptor> fake_payload;
  for (int i = 0; i < n; ++i) {
    fake_payload.push_back(describe_with_cls(fake_a[static_cast<std::size_t>(i)],
                                             "sample" + std::to_string(i) + ".fake_audio"));
    fake_payload.push_back(describe_with_cls(fake_v[static_cast<std::size_t>(i)],
                                             "sample" + std::to_string(i) + ".fake_visual"));
  }
  if (cfg.count_text_echo) {
    for (int i = 0; i < n; ++i) {
      fake_payload.push_back(describe_body(ds.samples()[static_cast<std::size_t>(i)].text,
                                           "sample" + std::to_string(i) + ".text_echo"));
    }
  }
  w.msg_fake_down = make_message(MessageKind::fake_down, kServerId, id, round, std::move(fake_payload));

  w.audio = modality_phase(ds, grant, Modality::audio, server.disc_audio, global_a, fake_a, cfg,
                           std::move(opt_a), server.master_seed, round);
  w.visual = modality_phase(ds, grant, Modality::visual, server.disc_visual, global_v, fake_v, cfg,
                            std::move(opt_v), server.master_seed, round);

  w.msg_report = make_message(
      MessageKind::client_report_up, id, kServerId, round,
      {describe_bundle(w.audio.updated_disc, Modality::audio, "disc_audio.updated"),
       describe_bundle(w.visual.updated_disc, Modality::visual, "disc_visual.updated"),
       describe_scalar(w.audio.report.l_g, "L_G.audio"),
       describe_scalar(w.audio.report.l_fake, "L_fake.audio"),
       describe_scalar(w.visual.report.l_g, "L_G.visual"),
       describe_scalar(w.visual.report.l_fake, "L_fake.visual")});
  return w;
}

}  // namespace

std::vector<RoundLossRecord> run_cgan_round(ServerState& server, const Federation& fed,
                                            std::map<int, ClientState>& clients, int S,
                                            const ProtocolConfig& cfg, CommsLedger& ledger,
                                            const std::vector<int>* execution_order,
                                            std::vector<ParamBundle>* client_disc_reports) {
  if (S < 1) throw ConfigError("run_cgan_round: S must be >= 1, got " + std::to_string(S));
  if (server.discriminators_frozen) {
    throw ContractError("run_cgan_round: discriminators are frozen; stage 1 is over");
  }
  std::vector<int> train_ids;
  for (int idx : fed.client_indices(Split::train)) {
    train_ids.push_back(fed.clients[static_cast<std::size_t>(idx)].client_id());
  }
  std::sort(train_ids.begin(), train_ids.end());
  if (S > static_cast<int>(train_ids.size())) {
    throw ConfigError("run_cgan_round: S=" + std::to_string(S) + " exceeds the " +
                      std::to_string(train_ids.size()) + " training clients");
  }
  const int round = server.round;

  RandomStream sel(derive_seed(server.master_seed, "select", static_cast<std::uint64_t>(round)));
  const std::vector<std::size_t> picks =
      sel.sample_without_replacement(train_ids.size(), static_cast<std::size_t>(S));
  std::vector<int> selected;
  selected.reserve(picks.size());
  for (std::size_t p : picks) selected.push_back(train_ids[p]);  // ascending

  std::vector<int> order = execution_order ? *execution_order : selected;
  {
    std::vector<int> check = order;
    std::sort(check.begin(), check.end());
    if (check != selected) {
      throw ContractError("run_cgan_round: execution order must be a permutation of the selected clients");
    }
  }

  DiscriminatorParams global_da = server.disc_audio;
  DiscriminatorParams global_dv = server.disc_visual;
  const ParamBundle global_a = snapshot(global_da.params());
  const ParamBundle global_v = snapshot(global_dv.params());

  // Independent client work; nothing below mutates server, clients, or the
  // ledger, so a throwing client aborts the round with all state intact.
  std::map<int, ClientWork> work;
  for (int id : order) {
    AdamState opt_a, opt_v;
    if (auto it = clients.find(id); it != clients.end()) {
      opt_a = it->second.opt_disc_audio;
      opt_v = it->second.opt_disc_visual;
    }
    work.emplace(id, client_phase(server, fed, id, round, cfg, global_a, global_v,
                                  std::move(opt_a), std::move(opt_v)));
  }

  // --- Server barrier: canonical ascending-id order everywhere below.
  ParamSet gen_a_set = server.gen_audio.params();
  ParamSet gen_v_set = server.gen_visual.params();
  gen_a_set.zero_grads();  // discard gradients deposited by the clients' D passes
  gen_v_set.zero_grads();

  const double share = 1.0 / static_cast<double>(S);
  const std::vector<double> seed{share};
  for (int id : selected) {
    work.at(id).audio.combined_g.backward(seed);
    work.at(id).visual.combined_g.backward(seed);
  }
  server.opt_gen_audio.lr = cfg.lr_g;
  server.opt_gen_visual.lr = cfg.lr_g;
  adam_step(gen_a_set, server.opt_gen_audio);
  adam_step(gen_v_set, server.opt_gen_visual);

  std::vector<ParamBundle> reports_a, reports_v;
  reports_a.reserve(selected.size());
  reports_v.reserve(selected.size());
  for (int id : selected) {
    if (client_disc_reports != nullptr) {
      client_disc_reports->push_back(work.at(id).audio.updated_disc);
      client_disc_reports->push_back(work.at(id).visual.updated_disc);
    }
    reports_a.push_back(std::move(work.at(id).audio.updated_disc));
    reports_v.push_back(std::move(work.at(id).visual.updated_disc));
  }
  const ParamBundle mean_a = fedavg(reports_a);
  const ParamBundle mean_v = fedavg(reports_v);
  ParamSet disc_a_set = server.disc_audio.params();
  ParamSet disc_v_set = server.disc_visual.params();
  restore(disc_a_set, mean_a);
  restore(disc_v_set, mean_v);

  for (int id : selected) {
    ClientState st;
    st.client_id = id;
    st.opt_disc_audio = std::move(work.at(id).audio.opt_after);
    st.opt_disc_visual = std::move(work.at(id).visual.opt_after);
    clients.insert_or_assign(id, std::move(st));
  }

  for (int id : selected) ledger.append(std::move(work.at(id).msg_disc_down));
  for (int id : selected) ledger.append(std::move(work.at(id).msg_text_up));
  for (int id : selected) ledger.append(std::move(work.at(id).msg_fake_down));
  for (int id : selected) ledger.append(std::move(work.at(id).msg_report));

  std::vector<RoundLossRecord> records;
  records.reserve(selected.size() * 2);
  for (int id : selected) {
    records.push_back({round, id, Modality::audio, work.at(id).audio.report});
    records.push_back({round, id, Modality::visual, work.at(id).visual.report});
  }
  server.round += 1;
  return records;
}

// ---------------------------------------------------------------------------
// Stage 2
// ---------------------------------------------------------------------------

namespace {

int class_label(double y, int classes) {
  if (classes == 2) return polarity(y) == Polarity::negative ? 0 : 1;
  // 7 classes: scores rounded half-away-from-zero onto the integers -3..3.
  const double r = std::round(std::clamp(y, -3.0, 3.0));
  return static_cast<int>(r) + 3;
}

}  // namespace

Stage2Result train_stage2(ServerState& server, const Federation& fed, int epochs,
                          const ProtocolConfig& cfg, CommsLedger& ledger,
                          Stage2Features features) {
  if (!server.discriminators_frozen) {
    throw ContractError("train_stage2: discriminator gradients are still enabled; freeze them first");
  }
  if (epochs < 1) throw ConfigError("train_stage2: epochs must be >= 1, got " + std::to_string(epochs));
  if (cfg.batch_size < 1) {
    throw ConfigError("train_stage2: batch_size must be >= 1, got " + std::to_string(cfg.batch_size));
  }
  const int classes = server.build.classes;
  if (cfg.stage2_client_labels && classes != 0) {
    throw ConfigError("stage2_client_labels supports regression only (classes = 0)");
  }

  const bool real_audio =
      features == Stage2Features::real || !is_private(cfg.scenario, Modality::audio);
  const bool real_visual =
      features == Stage2Features::real || !is_private(cfg.scenario, Modality::visual);
  std::optional<ModalityGrant> grant_audio, grant_visual;
  if (real_audio) grant_audio = ModalityGrant::scenario_shared(
      features == Stage2Features::real ? PrivacyScenario::all_shareable : cfg.scenario,
      Modality::audio);
  if (real_visual) grant_visual = ModalityGrant::scenario_shared(
      features == Stage2Features::real ? PrivacyScenario::all_shareable : cfg.scenario,
      Modality::visual);
  if (features == Stage2Features::real &&
      (is_private(cfg.scenario, Modality::audio) || is_private(cfg.scenario, Modality::visual))) {
    throw AccessError("train_stage2: real-feature training needs a scenario that shares both modalities");
  }

  const std::uint64_t frozen_before = discriminator_fingerprint(server);

  struct Ref {
    const ClientDataset* ds;
    int sample;
  };
  std::vector<Ref> flat;
  std::vector<int> train_idx = fed.client_indices(Split::train);
  std::sort(train_idx.begin(), train_idx.end(), [&](int a, int b) {
    return fed.clients[static_cast<std::size_t>(a)].client_id() <
           fed.clients[static_cast<std::size_t>(b)].client_id();
  });
  for (int ci : train_idx) {
    const ClientDataset& ds = fed.clients[static_cast<std::size_t>(ci)];
    for (int i = 0; i < ds.size(); ++i) flat.push_back({&ds, i});
  }
  if (flat.empty()) throw ContractError("train_stage2: no training samples");

  ParamSet head_set = server.msa.params();
  ParamSet gen_a_set = server.gen_audio.params();
  ParamSet gen_v_set = server.gen_visual.params();
  AdamState opt_head;
  opt_head.lr = cfg.lr_task;
  AdamState opt_gen_a, opt_gen_v;
  opt_gen_a.lr = cfg.lr_g;
  opt_gen_v.lr = cfg.lr_g;
  const bool tune_gen_a = !real_audio;
  const bool tune_gen_v = !real_visual;

  Stage2Result result;
  const std::size_t n = flat.size();
  for (int epoch = 0; epoch < epochs; ++epoch) {
    // Deterministic shuffle, independent of everything but (seed, epoch).
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    RandomStream shuf(derive_seed(server.master_seed, "stage2-shuffle", static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = shuf.next_index(i + 1);
      std::swap(perm[i], perm[j]);
    }

    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      head_set.zero_grads();
      if (tune_gen_a) gen_a_set.zero_grads();
      if (tune_gen_v) gen_v_set.zero_grads();

      std::vector<Tensor> preds;
      std::vector<double> ys;
      std::vector<int> labels;
      std::vector<int> owners;
      for (std::size_t k = start; k < stop; ++k) {
        const Ref& ref = flat[perm[k]];
        const Sample& s = ref.ds->samples()[static_cast<std::size_t>(ref.sample)];
        FeatureSequence audio_seq =
            real_audio ? s.audio.open(*grant_audio)
                       : generate_sequence(server.gen_audio, Modality::audio, s.text,
                                           NoiseSeed{derive_seed(server.master_seed, "stage2-noise-audio",
                                                                 static_cast<std::uint64_t>(epoch),
                                                                 static_cast<std::uint64_t>(perm[k]))},
                                           fed.len_a);
        FeatureSequence visual_seq =
            real_visual ? s.visual.open(*grant_visual)
                        : generate_sequence(server.gen_visual, Modality::visual, s.text,
                                            NoiseSeed{derive_seed(server.master_seed, "stage2-noise-visual",
                                                                  static_cast<std::uint64_t>(epoch),
                                                                  static_cast<std::uint64_t>(perm[k]))},
                                            fed.len_v);
        MsaOutput out = msa_forward(server.msa, s.text.cls(), audio_seq, visual_seq);
        preds.push_back(out.prediction);
        ys.push_back(s.y);
        if (classes > 0) labels.push_back(class_label(s.y, classes));
        owners.push_back(ref.ds->client_id());
      }

      double batch_loss = 0.0;
      if (cfg.stage2_client_labels) {
        // Per-sample task gradients come back from the label-owning clients
        // as scalars; only fake-derived predictions ever go out.
        const double inv = 1.0 / static_cast<double>(preds.size());
        const int msg_round = server.round + epoch;
        for (std::size_t i = 0; i < preds.size(); ++i) {
          const double y_hat = preds[i].item();
          ledger.append(make_message(MessageKind::fake_down, kServerId, owners[i], msg_round,
                                     {describe_scalar(y_hat, "prediction")}));
          const double g = 2.0 * (y_hat - ys[i]) * inv;  // client-side computation
          const double err = (y_hat - ys[i]) * (y_hat - ys[i]);
          TensorDescriptor gd = describe_scalar(g, "task_grad.prediction");
          gd.payload_class = PayloadClass::gradient;
          gd.provenance = Provenance::fake;
          ledger.append(make_message(MessageKind::client_report_up, owners[i], kServerId, msg_round,
                                     {gd, describe_scalar(err, "task_error")}));
          preds[i].backward(std::vector<double>{g});
          batch_loss += err * inv;
        }
      } else {
        const Tensor l = classes > 0 ? loss_task_classification(preds, labels)
                                     : loss_task_regression(preds, ys);
        l.backward();
        batch_loss = l.item();
      }

      adam_step(head_set, opt_head);
      if (tune_gen_a) adam_step(gen_a_set, opt_gen_a);
      if (tune_gen_v) adam_step(gen_v_set, opt_gen_v);
      epoch_loss += batch_loss;
      ++batches;
      ++result.batches_run;
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
  }

  if (discriminator_fingerprint(server) != frozen_before) {
    throw ContractError("train_stage2: frozen discriminators changed during the stage");
  }
  server.stage2_trained = true;
  return result;
}

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

namespace {

double decode_prediction(const Tensor& prediction, int classes) {
  if (classes == 0) return prediction.item();
  int best = 0;
  for (int k = 1; k < prediction.cols(); ++k) {
    if (prediction.at(0, k) > prediction.at(0, best)) best = k;
  }
  if (classes == 2) return best == 0 ? -1.0 : 1.0;
  return static_cast<double>(best - 3);
}

}  // namespace

InferenceResult infer(const ServerState& server, const FeatureSequence& text, NoiseSeed noise) {
  if (!text.defined() || text.modality() != Modality::text) {
    throw ContractError("infer: a text feature sequence is required");
  }
  NoGradGuard no_grad;
  const FeatureSequence fake_audio =
      generate_sequence(server.gen_audio, Modality::audio, text,
                        NoiseSeed{derive_seed(noise.value, "infer-audio")}, server.build.len_a);
  const FeatureSequence fake_visual =
      generate_sequence(server.gen_visual, Modality::visual, text,
                        NoiseSeed{derive_seed(noise.value, "infer-visual")}, server.build.len_v);
  InferenceResult result;
  result.detail = msa_forward(server.msa, text.cls(), fake_audio, fake_visual);
  result.prediction = result.detail.prediction;
  result.trained = server.stage2_trained;
  return result;
}

std::vector<EvalPrediction> evaluate_split(const ServerState& server, const Federation& fed,
                                           Split split, const ProtocolConfig& cfg) {
  NoGradGuard no_grad;
  const bool real_audio = !is_private(cfg.scenario, Modality::audio);
  const bool real_visual = !is_private(cfg.scenario, Modality::visual);
  std::optional<ModalityGrant> grant_audio, grant_visual;
  if (real_audio) grant_audio = ModalityGrant::scenario_shared(cfg.scenario, Modality::audio);
  if (real_visual) grant_visual = ModalityGrant::scenario_shared(cfg.scenario, Modality::visual);

  std::vector<int> idx = fed.client_indices(split);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    return fed.clients[static_cast<std::size_t>(a)].client_id() <
           fed.clients[static_cast<std::size_t>(b)].client_id();
  });

  std::vector<EvalPrediction> out;
  for (int ci : idx) {
    const ClientDataset& ds = fed.clients[static_cast<std::size_t>(ci)];
    for (int i = 0; i < ds.size(); ++i) {
      const Sample& s = ds.samples()[static_cast<std::size_t>(i)];
      FeatureSequence audio_seq =
          real_audio ? s.audio.open(*grant_audio)
                     : generate_sequence(server.gen_audio, Modality::audio, s.text,
                                         NoiseSeed{derive_seed(server.master_seed, "eval-noise-audio",
                                                               static_cast<std::uint64_t>(split),
                                                               static_cast<std::uint64_t>(ds.client_id()),
                                                               static_cast<std::uint64_t>(i))},
                                         fed.len_a);
      FeatureSequence visual_seq =
          real_visual ? s.visual.open(*grant_visual)
                      : generate_sequence(server.gen_visual, Modality::visual, s.text,
                                          NoiseSeed{derive_seed(server.master_seed, "eval-noise-visual",
                                                                static_cast<std::uint64_t>(split),
                                                                static_cast<std::uint64_t>(ds.client_id()),
                                                                static_cast<std::uint64_t>(i))},
                                          fed.len_v);
      const MsaOutput mo = msa_forward(server.msa, s.text.cls(), audio_seq, visual_seq);
      out.push_back({ds.client_id(), i, s.y, decode_prediction(mo.prediction, server.build.classes)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Communication accounting
// ---------------------------------------------------------------------------

CommsSummary comms_summary(const CommsLedger& ledger, const Federation& fed,
                           const ServerState& server, const ProtocolConfig& cfg) {
  CommsSummary s;
  s.total_elements = ledger.total_elements();
  s.text_up_elements = ledger.total_elements(MessageKind::text_up);
  s.fake_down_elements = ledger.total_elements(MessageKind::fake_down);
  s.disc_down_elements = ledger.total_elements(MessageKind::disc_down);
  s.report_up_elements = ledger.total_elements(MessageKind::client_report_up);

  DiscriminatorParams da = server.disc_audio;
  DiscriminatorParams dv = server.disc_visual;
  const std::uint64_t p_a = da.params().total_elements();
  const std::uint64_t p_v = dv.params().total_elements();
  const std::uint64_t p_disc = p_a + p_v;

  // Reconstruct the selection from the DiscDown records, then predict every
  // component from the geometry alone.
  std::map<int, std::vector<int>> selected_by_round;
  for (const Message& m : ledger.messages()) {
    if (m.kind == MessageKind::disc_down) selected_by_round[m.round].push_back(m.receiver);
  }
  const std::uint64_t text_elems =
      static_cast<std::uint64_t>(fed.len_t) * static_cast<std::uint64_t>(fed.d_t);
  const std::uint64_t fake_elems =
      static_cast<std::uint64_t>(fed.len_a + 1) * static_cast<std::uint64_t>(fed.d_a) +
      static_cast<std::uint64_t>(fed.len_v + 1) * static_cast<std::uint64_t>(fed.d_v);
  std::uint64_t closed = 0;
  std::uint64_t disc_exchange = 0;
  for (const auto& [round, ids] : selected_by_round) {
    for (int id : ids) {
      const std::uint64_t n_c = static_cast<std::uint64_t>(fed.client_by_id(id).size());
      closed += p_disc;                 // DiscDown
      closed += p_disc + 4;             // ClientReportUp: parameters + 4 loss scalars
      closed += n_c * text_elems;       // TextUp
      closed += n_c * fake_elems;       // FakeDown fakes (body + <CLS>)
      if (cfg.count_text_echo) closed += n_c * text_elems;
      disc_exchange += 2 * p_disc;
    }
    s.per_round_disc_exchange = 2 * static_cast<std::uint64_t>(ids.size()) * p_disc;
  }
  s.rounds = static_cast<int>(selected_by_round.size());
  s.closed_form_elements = closed;
  s.disc_exchange_elements = disc_exchange;
  s.formula = "per round: 2*S*(|D_a|+|D_v|) = 2*S*" + std::to_string(p_disc) +
              ", plus per selected client c: n_c*" + std::to_string(text_elems) +
              " (text up)" + (cfg.count_text_echo ? " twice (echo down)" : "") + " + n_c*" +
              std::to_string(fake_elems) + " (fakes down) + 4 loss scalars";

  if (s.closed_form_elements != s.total_elements) {
    throw ContractError("comms_summary: ledger fold " + std::to_string(s.total_elements) +
                        " differs from the closed-form count " +
                        std::to_string(s.closed_form_elements));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x4859434B;  // "HYCK"
constexpr std::uint32_t kCheckpointVersion = 1;

void append_bundle_for(ParamSet set, std::vector<std::uint8_t>& out) {
  const std::vector<std::uint8_t> b = serialize_bundle(snapshot(set));
  out.insert(out.end(), b.begin(), b.end());
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const TrainingRuntime& rt) {
  const ServerState& sv = rt.server;
  std::vector<std::uint8_t> out;
  append_u32(out, kCheckpointMagic);
  append_u32(out, kCheckpointVersion);
  append_u64(out, sv.master_seed);
  append_u32(out, static_cast<std::uint32_t>(sv.round));
  std::uint32_t flags = 0;
  if (sv.discriminators_frozen) flags |= 1u;
  if (sv.stage2_trained) flags |= 2u;
  append_u32(out, flags);

  const ServerBuild& b = sv.build;
  for (int v : {b.d_t, b.d_a, b.d_v, b.len_a, b.len_v, b.width, b.gen_audio_layers,
                b.gen_audio_heads, b.gen_visual_layers, b.gen_visual_heads, b.disc_audio_layers,
                b.disc_audio_heads, b.disc_visual_layers, b.disc_visual_heads, b.msa_audio_layers,
                b.msa_audio_heads, b.msa_visual_layers, b.msa_visual_heads, b.classes}) {
    append_u32(out, static_cast<std::uint32_t>(v));
  }

  GeneratorParams ga = sv.gen_audio, gv = sv.gen_visual;
  DiscriminatorParams da = sv.disc_audio, dv = sv.disc_visual;
  MsaHeadParams msa = sv.msa;
  append_bundle_for(ga.params(), out);
  append_bundle_for(gv.params(), out);
  append_bundle_for(da.params(), out);
  append_bundle_for(dv.params(), out);
  append_bundle_for(msa.params(), out);

  for (const AdamState* st : {&sv.opt_gen_audio, &sv.opt_gen_visual}) {
    const std::vector<std::uint8_t> a = serialize_adam(*st);
    out.insert(out.end(), a.begin(), a.end());
  }

  append_u32(out, static_cast<std::uint32_t>(rt.clients.size()));
  for (const auto& [id, st] : rt.clients) {
    append_u32(out, static_cast<std::uint32_t>(id));
    const std::vector<std::uint8_t> a = serialize_adam(st.opt_disc_audio);
    out.insert(out.end(), a.begin(), a.end());
    const std::vector<std::uint8_t> v = serialize_adam(st.opt_disc_visual);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

TrainingRuntime load_checkpoint(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  if (read_u32(bytes, pos) != kCheckpointMagic) {
    throw ParseError("checkpoint: bad magic (not a checkpoint file)");
  }
  const std::uint32_t version = read_u32(bytes, pos);
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint64_t seed = read_u64(bytes, pos);
  const int round = static_cast<int>(read_u32(bytes, pos));
  const std::uint32_t flags = read_u32(bytes, pos);

  ServerBuild b;
  for (int* v : {&b.d_t, &b.d_a, &b.d_v, &b.len_a, &b.len_v, &b.width, &b.gen_audio_layers,
                 &b.gen_audio_heads, &b.gen_visual_layers, &b.gen_visual_heads,
                 &b.disc_audio_layers, &b.disc_audio_heads, &b.disc_visual_layers,
                 &b.disc_visual_heads, &b.msa_audio_layers, &b.msa_audio_heads,
                 &b.msa_visual_layers, &b.msa_visual_heads, &b.classes}) {
    *v = static_cast<int>(read_u32(bytes, pos));
  }

  TrainingRuntime rt;
  rt.server = make_server(seed, b);
  rt.server.round = round;
  rt.server.discriminators_frozen = (flags & 1u) != 0;
  rt.server.stage2_trained = (flags & 2u) != 0;

  auto restore_into = [&](ParamSet set) {
    std::size_t consumed = 0;
    const ParamBundle bundle = deserialize_bundle(bytes.subspan(pos), &consumed);
    pos += consumed;
    restore(set, bundle);
  };
  restore_into(rt.server.gen_audio.params());
  restore_into(rt.server.gen_visual.params());
  restore_into(rt.server.disc_audio.params());
  restore_into(rt.server.disc_visual.params());
  restore_into(rt.server.msa.params());

  auto read_adam = [&]() {
    std::size_t consumed = 0;
    AdamState st = deserialize_adam(bytes.subspan(pos), &consumed);
    pos += consumed;
    return st;
  };
  rt.server.opt_gen_audio = read_adam();
  rt.server.opt_gen_visual = read_adam();

  const std::uint32_t n_clients = read_u32(bytes, pos);
  for (std::uint32_t i = 0; i < n_clients; ++i) {
    ClientState st;
    st.client_id = static_cast<int>(read_u32(bytes, pos));
    st.opt_disc_audio = read_adam();
    st.opt_disc_visual = read_adam();
    rt.clients.emplace(st.client_id, std::move(st));
  }
  if (pos != bytes.size()) {
    throw ParseError("checkpoint: " + std::to_string(bytes.size() - pos) + " trailing bytes");
  }
  return rt;
}

void save_checkpoint_file(const TrainingRuntime& rt, const std::string& path) {
  const std::vector<std::uint8_t> bytes = serialize_checkpoint(rt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ParseError("write to '" + path + "' failed");
}

TrainingRuntime load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint file '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_checkpoint(bytes);
}

}  // namespace hydisc
