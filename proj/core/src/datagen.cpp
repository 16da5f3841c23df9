#include "hydisc/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "hydisc/errors.hpp"
#include "hydisc/rng.hpp"

namespace hydisc {

namespace {
using nlohmann::json;
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split name: '" + std::string(s) + "' (expected train|valid|test)");
}

const char* to_string(Polarity p) {
  return p == Polarity::negative ? "negative" : "non-negative";
}

Polarity polarity(double y) {
  if (!(y >= -3.0 && y <= 3.0)) {
    throw ContractError("polarity: label " + std::to_string(y) + " outside [-3, 3]");
  }
  return y < 0.0 ? Polarity::negative : Polarity::non_negative;
}

const char* to_string(PrivacyScenario s) {
  switch (s) {
    case PrivacyScenario::all_shareable: return "all-shareable";
    case PrivacyScenario::audio_privacy: return "audio-privacy";
    case PrivacyScenario::visual_privacy: return "visual-privacy";
    case PrivacyScenario::audio_visual_privacy: return "audio-visual-privacy";
  }
  return "?";
}

PrivacyScenario scenario_from_string(std::string_view s) {
  if (s == "all-shareable") return PrivacyScenario::all_shareable;
  if (s == "audio-privacy") return PrivacyScenario::audio_privacy;
  if (s == "visual-privacy") return PrivacyScenario::visual_privacy;
  if (s == "audio-visual-privacy") return PrivacyScenario::audio_visual_privacy;
  throw ConfigError("unknown scenario name: '" + std::string(s) +
                    "' (expected all-shareable|audio-privacy|visual-privacy|audio-visual-privacy)");
}

bool is_private(PrivacyScenario s, Modality m) {
  if (m == Modality::text) return false;
  switch (s) {
    case PrivacyScenario::all_shareable: return false;
    case PrivacyScenario::audio_privacy: return m == Modality::audio;
    case PrivacyScenario::visual_privacy: return m == Modality::visual;
    case PrivacyScenario::audio_visual_privacy: return true;
  }
  return true;
}

ModalityGrant ModalityGrant::client_local(int client_id) {
  if (client_id < 0) throw ContractError("ModalityGrant: client id must be non-negative");
  return ModalityGrant(client_id, std::nullopt);
}

ModalityGrant ModalityGrant::scenario_shared(PrivacyScenario s, Modality m) {
  if (is_private(s, m)) {
    throw AccessError("scenario '" + std::string(to_string(s)) + "' keeps modality " +
                      to_string(m) + " private; no shared grant exists");
  }
  return ModalityGrant(-1, m);
}

bool ModalityGrant::covers(int owner, Modality m) const {
  if (client_ >= 0 && client_ != owner) return false;
  if (modality_.has_value() && *modality_ != m) return false;
  return true;
}

PrivateFeature::PrivateFeature(int owner, FeatureSequence seq)
    : owner_(owner), seq_(std::move(seq)) {
  if (owner_ < 0) throw ContractError("PrivateFeature: owner must be non-negative");
  if (!seq_.defined()) throw ContractError("PrivateFeature: sequence must be defined");
}

const FeatureSequence& PrivateFeature::open(const ModalityGrant& grant) const {
  if (!grant.covers(owner_, seq_.modality())) {
    throw AccessError("grant does not cover " + to_string(seq_.modality()) +
                      " features of client " + std::to_string(owner_));
  }
  return seq_;
}

Modality PrivateFeature::modality() const { return seq_.modality(); }
int PrivateFeature::length() const { return seq_.length(); }
int PrivateFeature::dim() const { return seq_.dim(); }

ClientDataset::ClientDataset(int client_id, Split split, std::vector<Sample> samples)
    : client_id_(client_id), split_(split), samples_(std::move(samples)) {
  if (samples_.empty()) {
    throw ContractError("ClientDataset: client " + std::to_string(client_id) + " has no samples");
  }
  for (const Sample& s : samples_) {
    if (s.audio.owner() != client_id_ || s.visual.owner() != client_id_) {
      throw ContractError("ClientDataset: sample owned by a different client than " +
                          std::to_string(client_id_));
    }
  }
}

void FederationSpec::validate() const {
  auto check_split = [](const char* name, const SplitSpec& s) {
    if (s.clients < 1) {
      throw ConfigError(std::string(name) + ".clients must be >= 1, got " + std::to_string(s.clients));
    }
    if (s.total_samples < s.clients) {
      throw ConfigError(std::string(name) + ".total_samples must be >= clients (every client needs a sample), got " +
                        std::to_string(s.total_samples) + " for " + std::to_string(s.clients) + " clients");
    }
  };
  check_split("train", train);
  check_split("valid", valid);
  check_split("test", test);
  auto check_pos = [](const char* name, int v) {
    if (v < 1) throw ConfigError(std::string(name) + " must be >= 1, got " + std::to_string(v));
  };
  check_pos("d_t", d_t);
  check_pos("d_a", d_a);
  check_pos("d_v", d_v);
  check_pos("len_t", len_t);
  check_pos("len_a", len_a);
  check_pos("len_v", len_v);
  if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0, got " + std::to_string(alpha));
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0, got " + std::to_string(noise_sigma));
  if (style_sigma < 0.0) throw ConfigError("style_sigma must be >= 0, got " + std::to_string(style_sigma));
}

std::vector<int> Federation::client_indices(Split s) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(clients.size()); ++i) {
    if (clients[i].split() == s) out.push_back(i);
  }
  return out;
}

const ClientDataset& Federation::client_by_id(int id) const {
  for (const ClientDataset& c : clients) {
    if (c.client_id() == id) return c;
  }
  throw ContractError("unknown client id " + std::to_string(id));
}

int Federation::total_samples(Split s) const {
  int n = 0;
  for (const ClientDataset& c : clients) {
    if (c.split() == s) n += c.size();
  }
  return n;
}

namespace {

// Splits `total` into `clients` positive integers summing exactly to total.
// Equal mode spreads the remainder over the first clients; varied mode draws
// Gamma weights and uses largest-remainder rounding.
std::vector<int> partition_sizes(int total, int clients, bool equal, RandomStream& rs) {
  std::vector<int> sizes(static_cast<std::size_t>(clients), 0);
  if (equal) {
    const int q = total / clients;
    const int r = total % clients;
    for (int i = 0; i < clients; ++i) sizes[static_cast<std::size_t>(i)] = q + (i < r ? 1 : 0);
    return sizes;
  }
  std::vector<double> raw(static_cast<std::size_t>(clients));
  double wsum = 0.0;
  for (auto& w : raw) {
    w = rs.next_gamma(4.0);
    wsum += w;
  }
  int base_total = 0;
  std::vector<double> frac(static_cast<std::size_t>(clients));
  for (int i = 0; i < clients; ++i) {
    const double share = static_cast<double>(total) * raw[static_cast<std::size_t>(i)] / wsum;
    const int base = static_cast<int>(std::floor(share));
    sizes[static_cast<std::size_t>(i)] = base;
    frac[static_cast<std::size_t>(i)] = share - base;
    base_total += base;
  }
  int deficit = total - base_total;
  std::vector<int> order(static_cast<std::size_t>(clients));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return frac[static_cast<std::size_t>(a)] > frac[static_cast<std::size_t>(b)];
  });
  for (int k = 0; k < deficit; ++k) sizes[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] += 1;
  // Every client needs at least one sample; take from the largest.
  for (int i = 0; i < clients; ++i) {
    while (sizes[static_cast<std::size_t>(i)] == 0) {
      const auto it = std::max_element(sizes.begin(), sizes.end());
      if (*it <= 1) throw ConfigError("partition: not enough samples to give every client one");
      *it -= 1;
      sizes[static_cast<std::size_t>(i)] += 1;
    }
  }
  return sizes;
}

struct FederationMaps {
  std::vector<double> w_t, w_a, w_v;  // sentiment directions per modality
  std::vector<double> a_map, b_map;   // d_a x d_t and d_v x d_t, row-major
};

FederationMaps draw_maps(const FederationSpec& spec) {
  RandomStream rs(derive_seed(spec.seed, "fedmaps"));
  FederationMaps m;
  m.w_t.resize(static_cast<std::size_t>(spec.d_t));
  m.w_a.resize(static_cast<std::size_t>(spec.d_a));
  m.w_v.resize(static_cast<std::size_t>(spec.d_v));
  for (auto& x : m.w_t) x = rs.next_gaussian();
  for (auto& x : m.w_a) x = rs.next_gaussian();
  for (auto& x : m.w_v) x = rs.next_gaussian();
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(spec.d_t));
  m.a_map.resize(static_cast<std::size_t>(spec.d_a) * static_cast<std::size_t>(spec.d_t));
  m.b_map.resize(static_cast<std::size_t>(spec.d_v) * static_cast<std::size_t>(spec.d_t));
  for (auto& x : m.a_map) x = rs.next_gaussian() * map_scale;
  for (auto& x : m.b_map) x = rs.next_gaussian() * map_scale;
  return m;
}

Sample draw_sample(const FederationSpec& spec, const FederationMaps& maps, int client_id,
                   int sample_index, double p_negative, const std::vector<double>& style_a,
                   const std::vector<double>& style_v) {
  RandomStream rs(derive_seed(spec.seed, "sample", static_cast<std::uint64_t>(client_id),
                              static_cast<std::uint64_t>(sample_index)));
  const bool negative = rs.next_double() < p_negative;
  const double u = negative ? rs.next_uniform(-3.0, 0.0) : rs.next_uniform(0.0, 3.0);
  const double lift = u / 3.0;

  std::vector<double> text(static_cast<std::size_t>(spec.len_t) * static_cast<std::size_t>(spec.d_t));
  for (int j = 0; j < spec.len_t; ++j) {
    for (int k = 0; k < spec.d_t; ++k) {
      text[static_cast<std::size_t>(j * spec.d_t + k)] =
          lift * maps.w_t[static_cast<std::size_t>(k)] + spec.noise_sigma * rs.next_gaussian();
    }
  }
  std::vector<double> tbar(static_cast<std::size_t>(spec.d_t), 0.0);
  for (int j = 0; j < spec.len_t; ++j) {
    for (int k = 0; k < spec.d_t; ++k) tbar[static_cast<std::size_t>(k)] += text[static_cast<std::size_t>(j * spec.d_t + k)];
  }
  for (auto& v : tbar) v /= static_cast<double>(spec.len_t);

  auto draw_private = [&](int len, int dim, const std::vector<double>& map,
                          const std::vector<double>& w, const std::vector<double>& style) {
    std::vector<double> body(static_cast<std::size_t>(len) * static_cast<std::size_t>(dim));
    for (int j = 0; j < len; ++j) {
      for (int k = 0; k < dim; ++k) {
        double base = 0.0;
        for (int t = 0; t < spec.d_t; ++t) {
          base += map[static_cast<std::size_t>(k * spec.d_t + t)] * tbar[static_cast<std::size_t>(t)];
        }
        body[static_cast<std::size_t>(j * dim + k)] = base + lift * w[static_cast<std::size_t>(k)] +
                                                      style[static_cast<std::size_t>(k)] +
                                                      spec.noise_sigma * rs.next_gaussian();
      }
    }
    return body;
  };
  std::vector<double> audio = draw_private(spec.len_a, spec.d_a, maps.a_map, maps.w_a, style_a);
  std::vector<double> visual = draw_private(spec.len_v, spec.d_v, maps.b_map, maps.w_v, style_v);

  FeatureSequence text_seq = FeatureSequence::real(Modality::text, Tensor::from_rows(spec.len_t, spec.d_t, std::move(text)));
  FeatureSequence audio_seq = FeatureSequence::real(Modality::audio, Tensor::from_rows(spec.len_a, spec.d_a, std::move(audio)));
  FeatureSequence visual_seq = FeatureSequence::real(Modality::visual, Tensor::from_rows(spec.len_v, spec.d_v, std::move(visual)));
  return Sample{std::move(text_seq), PrivateFeature(client_id, std::move(audio_seq)),
                PrivateFeature(client_id, std::move(visual_seq)), u, polarity(u)};
}

}  // namespace

Federation make_federation(const FederationSpec& spec) {
  spec.validate();
  const FederationMaps maps = draw_maps(spec);
  Federation fed;
  fed.d_t = spec.d_t;
  fed.d_a = spec.d_a;
  fed.d_v = spec.d_v;
  fed.len_t = spec.len_t;
  fed.len_a = spec.len_a;
  fed.len_v = spec.len_v;

  int next_id = 0;
  const std::pair<Split, const SplitSpec*> splits[3] = {
      {Split::train, &spec.train}, {Split::valid, &spec.valid}, {Split::test, &spec.test}};
  for (int si = 0; si < 3; ++si) {
    const auto& [split, ss] = splits[si];
    RandomStream size_rs(derive_seed(spec.seed, "sizes", static_cast<std::uint64_t>(si)));
    const std::vector<int> sizes =
        partition_sizes(ss->total_samples, ss->clients, spec.equal_samples_per_client, size_rs);
    for (int c = 0; c < ss->clients; ++c) {
      const int client_id = next_id++;
      RandomStream style_rs(derive_seed(spec.seed, "style", static_cast<std::uint64_t>(client_id)));
      std::vector<double> style_a(static_cast<std::size_t>(spec.d_a));
      std::vector<double> style_v(static_cast<std::size_t>(spec.d_v));
      for (auto& x : style_a) x = spec.style_sigma * style_rs.next_gaussian();
      for (auto& x : style_v) x = spec.style_sigma * style_rs.next_gaussian();
      RandomStream mix_rs(derive_seed(spec.seed, "mix", static_cast<std::uint64_t>(client_id)));
      const double g_neg = mix_rs.next_gamma(spec.alpha);
      const double g_pos = mix_rs.next_gamma(spec.alpha);
      const double p_negative = g_neg / (g_neg + g_pos);

      std::vector<Sample> samples;
      samples.reserve(static_cast<std::size_t>(sizes[static_cast<std::size_t>(c)]));
      for (int i = 0; i < sizes[static_cast<std::size_t>(c)]; ++i) {
        samples.push_back(draw_sample(spec, maps, client_id, i, p_negative, style_a, style_v));
      }
      fed.clients.emplace_back(client_id, split, std::move(samples));
    }
  }
  return fed;
}

FederationSpec preset_spec(const std::string& name) {
  FederationSpec s;  // compact dims/lengths from the defaults
  if (name == "mosi-toy") {
    s.train = {8, 48};
    s.valid = {2, 12};
    s.test = {3, 18};
    s.equal_samples_per_client = false;
    return s;
  }
  if (name == "mosei-toy") {
    s.train = {6, 36};
    s.valid = {2, 12};
    s.test = {2, 12};
    s.equal_samples_per_client = true;
    return s;
  }
  if (name == "mosi") {
    s.train = {52, 1284};
    s.valid = {10, 229};
    s.test = {31, 686};
    s.equal_samples_per_client = false;
    return s;
  }
  if (name == "mosei") {
    s.train = {150, 16326};
    s.valid = {50, 1871};
    s.test = {100, 4659};
    s.equal_samples_per_client = true;
    return s;
  }
  throw ConfigError("unknown dataset preset: '" + name +
                    "' (expected mosi-toy|mosei-toy|mosi|mosei)");
}

namespace {

std::uint64_t hash_doubles(std::span<const double> xs, std::uint64_t h) {
  return fnv1a(xs.data(), xs.size() * sizeof(double), h);
}

std::uint64_t hash_int(std::uint64_t v, std::uint64_t h) { return fnv1a(&v, sizeof(v), h); }

}  // namespace

std::uint64_t federation_hash(const Federation& fed) {
  std::uint64_t h = fnv1a("federation");
  for (int v : {fed.d_t, fed.d_a, fed.d_v, fed.len_t, fed.len_a, fed.len_v}) {
    h = hash_int(static_cast<std::uint64_t>(v), h);
  }
  for (const ClientDataset& c : fed.clients) {
    h = hash_int(static_cast<std::uint64_t>(c.client_id()), h);
    h = hash_int(static_cast<std::uint64_t>(c.split()), h);
    const ModalityGrant grant = ModalityGrant::client_local(c.client_id());
    for (const Sample& s : c.samples()) {
      const double y = s.y;
      h = fnv1a(&y, sizeof(y), h);
      h = hash_doubles(s.text.body().values(), h);
      h = hash_doubles(s.text.cls().values(), h);
      h = hash_doubles(s.audio.open(grant).body().values(), h);
      h = hash_doubles(s.visual.open(grant).body().values(), h);
    }
  }
  return h;
}

namespace {

void append_number(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

void append_matrix(std::string& out, const Tensor& t) {
  out += '[';
  for (int r = 0; r < t.rows(); ++r) {
    if (r > 0) out += ',';
    out += '[';
    for (int c = 0; c < t.cols(); ++c) {
      if (c > 0) out += ',';
      append_number(out, t.at(r, c));
    }
    out += ']';
  }
  out += ']';
}

std::vector<double> flatten_matrix(const json& rows, int expect_len, int expect_dim,
                                   const char* field, int record) {
  if (!rows.is_array() || static_cast<int>(rows.size()) != expect_len) {
    throw ParseError("record " + std::to_string(record) + ": field '" + field + "' must be an array of " +
                     std::to_string(expect_len) + " rows");
  }
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(expect_len) * static_cast<std::size_t>(expect_dim));
  for (const auto& row : rows) {
    if (!row.is_array() || static_cast<int>(row.size()) != expect_dim) {
      throw ParseError("record " + std::to_string(record) + ": field '" + field + "' row has wrong width, expected " +
                       std::to_string(expect_dim));
    }
    for (const auto& v : row) {
      if (!v.is_number()) {
        throw ParseError("record " + std::to_string(record) + ": field '" + field + "' holds a non-number");
      }
      flat.push_back(v.get<double>());
    }
  }
  return flat;
}

}  // namespace

void export_federation(const Federation& fed, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");

  json header;
  header["version"] = 1;
  header["dims"] = {{"text", fed.d_t}, {"audio", fed.d_a}, {"visual", fed.d_v}};
  header["lengths"] = {{"text", fed.len_t}, {"audio", fed.len_a}, {"visual", fed.len_v}};
  json splits;
  for (Split s : {Split::train, Split::valid, Split::test}) {
    splits[to_string(s)] = static_cast<int>(fed.client_indices(s).size());
  }
  header["splits"] = splits;
  out << header.dump() << '\n';

  for (const ClientDataset& c : fed.clients) {
    const ModalityGrant grant = ModalityGrant::client_local(c.client_id());
    for (const Sample& s : c.samples()) {
      std::string line = "{\"client\":" + std::to_string(c.client_id()) + ",\"split\":\"" +
                         to_string(c.split()) + "\",\"y\":";
      append_number(line, s.y);
      line += ",\"text\":";
      append_matrix(line, s.text.body());
      line += ",\"audio\":";
      append_matrix(line, s.audio.open(grant).body());
      line += ",\"visual\":";
      append_matrix(line, s.visual.open(grant).body());
      line += '}';
      out << line << '\n';
    }
  }
  if (!out) throw ParseError("write to '" + path + "' failed");
}

Federation ingest_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open dataset file '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ":1: missing header line");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(path + ":1: header is not valid JSON: " + e.what());
  }
  Federation fed;
  try {
    fed.d_t = header.at("dims").at("text").get<int>();
    fed.d_a = header.at("dims").at("audio").get<int>();
    fed.d_v = header.at("dims").at("visual").get<int>();
    fed.len_t = header.at("lengths").at("text").get<int>();
    fed.len_a = header.at("lengths").at("audio").get<int>();
    fed.len_v = header.at("lengths").at("visual").get<int>();
  } catch (const json::exception& e) {
    throw ParseError(path + ":1: header missing dims/lengths: " + e.what());
  }
  if (fed.d_t < 1 || fed.d_a < 1 || fed.d_v < 1 || fed.len_t < 1 || fed.len_a < 1 || fed.len_v < 1) {
    throw ParseError(path + ":1: header dims/lengths must all be >= 1");
  }

  // Group samples per client in file order; client order follows first sight.
  std::vector<int> client_order;
  std::map<int, Split> client_split;
  std::map<int, std::vector<Sample>> client_samples;

  int line_no = 1;
  int record = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ++record;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    int client = 0;
    Split split = Split::train;
    double y = 0.0;
    try {
      client = j.at("client").get<int>();
      split = split_from_string(j.at("split").get<std::string>());
      y = j.at("y").get<double>();
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": record " + std::to_string(record) +
                       " missing client/split/y: " + e.what());
    }
    if (client < 0) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": record " + std::to_string(record) +
                       " has negative client id");
    }
    if (!(y >= -3.0 && y <= 3.0)) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": record " + std::to_string(record) +
                       " label y=" + std::to_string(y) + " outside [-3, 3]");
    }
    std::vector<double> text, audio, visual;
    try {
      text = flatten_matrix(j.at("text"), fed.len_t, fed.d_t, "text", record);
      audio = flatten_matrix(j.at("audio"), fed.len_a, fed.d_a, "audio", record);
      visual = flatten_matrix(j.at("visual"), fed.len_v, fed.d_v, "visual", record);
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": record " + std::to_string(record) +
                       " missing a modality field: " + e.what());
    }
    auto it = client_split.find(client);
    if (it == client_split.end()) {
      client_split[client] = split;
      client_order.push_back(client);
    } else if (it->second != split) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": record " + std::to_string(record) +
                       " puts client " + std::to_string(client) + " in two splits");
    }
    FeatureSequence text_seq = FeatureSequence::real(Modality::text, Tensor::from_rows(fed.len_t, fed.d_t, std::move(text)));
    FeatureSequence audio_seq = FeatureSequence::real(Modality::audio, Tensor::from_rows(fed.len_a, fed.d_a, std::move(audio)));
    FeatureSequence visual_seq = FeatureSequence::real(Modality::visual, Tensor::from_rows(fed.len_v, fed.d_v, std::move(visual)));
    client_samples[client].push_back(Sample{std::move(text_seq), PrivateFeature(client, std::move(audio_seq)),
                                            PrivateFeature(client, std::move(visual_seq)), y, polarity(y)});
  }
  if (record == 0) throw ParseError(path + ": no sample records after the header");

  // Emit clients split by split, preserving first-sight order within a split,
  // so round-trips keep the train/valid/test block layout.
  for (Split s : {Split::train, Split::valid, Split::test}) {
    for (int id : client_order) {
      if (client_split[id] != s) continue;
      fed.clients.emplace_back(id, s, std::move(client_samples[id]));
    }
  }
  return fed;
}

}  // namespace hydisc
