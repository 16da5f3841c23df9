#include "hydisc/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <string_view>

#include "hydisc/errors.hpp"

namespace hydisc {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not a number");
  }
  if (used != v.size()) throw ConfigError(key + ": '" + v + "' is not a number");
  return x;
}

int parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long x = 0;
  try {
    x = std::stol(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not an integer");
  }
  if (used != v.size()) throw ConfigError(key + ": '" + v + "' is not an integer");
  return static_cast<int>(x);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not an unsigned integer");
  }
  if (used != v.size()) throw ConfigError(key + ": '" + v + "' is not an unsigned integer");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected 'true' or 'false', got '" + v + "'");
}

void set_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "lambda_d") cfg.lambda_d = parse_double(key, value);
  else if (key == "lambda_g") cfg.lambda_g = parse_double(key, value);
  else if (key == "tau") cfg.tau = parse_double(key, value);
  else if (key == "rounds") cfg.rounds = parse_int(key, value);
  else if (key == "s_per_round") cfg.s_per_round = parse_int(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_int(key, value);
  else if (key == "stage2_epochs") cfg.stage2_epochs = parse_int(key, value);
  else if (key == "lr_g") cfg.lr_g = parse_double(key, value);
  else if (key == "lr_d") cfg.lr_d = parse_double(key, value);
  else if (key == "lr_task") cfg.lr_task = parse_double(key, value);
  else if (key == "width") cfg.width = parse_int(key, value);
  else if (key == "gen_audio_layers") cfg.gen_audio_layers = parse_int(key, value);
  else if (key == "gen_audio_heads") cfg.gen_audio_heads = parse_int(key, value);
  else if (key == "gen_visual_layers") cfg.gen_visual_layers = parse_int(key, value);
  else if (key == "gen_visual_heads") cfg.gen_visual_heads = parse_int(key, value);
  else if (key == "disc_audio_layers") cfg.disc_audio_layers = parse_int(key, value);
  else if (key == "disc_audio_heads") cfg.disc_audio_heads = parse_int(key, value);
  else if (key == "disc_visual_layers") cfg.disc_visual_layers = parse_int(key, value);
  else if (key == "disc_visual_heads") cfg.disc_visual_heads = parse_int(key, value);
  else if (key == "msa_audio_layers") cfg.msa_audio_layers = parse_int(key, value);
  else if (key == "msa_audio_heads") cfg.msa_audio_heads = parse_int(key, value);
  else if (key == "msa_visual_layers") cfg.msa_visual_layers = parse_int(key, value);
  else if (key == "msa_visual_heads") cfg.msa_visual_heads = parse_int(key, value);
  else if (key == "classes") cfg.classes = parse_int(key, value);
  else if (key == "scenario") cfg.scenario = value;
  else if (key == "seed") cfg.seed = parse_u64(key, value);
  else if (key == "dataset") cfg.dataset = value;
  else if (key == "contrastive_standard_denominator")
    cfg.contrastive_standard_denominator = parse_bool(key, value);
  else if (key == "count_text_echo") cfg.count_text_echo = parse_bool(key, value);
  else if (key == "stage2_client_labels") cfg.stage2_client_labels = parse_bool(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void apply_config_file(TrainConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const std::size_t hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value, got '" +
                        stripped + "'");
    }
    const std::string key = trim(std::string_view(stripped).substr(0, eq));
    const std::string value = trim(std::string_view(stripped).substr(eq + 1));
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
    try {
      set_key(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate(cfg);
}

void validate(const TrainConfig& cfg) {
  auto unit = [](const char* name, double v) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ConfigError(std::string(name) + " must lie in [0, 1], got " + std::to_string(v));
    }
  };
  auto positive = [](const char* name, double v) {
    if (!(v > 0.0)) {
      throw ConfigError(std::string(name) + " must be > 0, got " + std::to_string(v));
    }
  };
  auto least_one = [](const char* name, int v) {
    if (v < 1) {
      throw ConfigError(std::string(name) + " must be >= 1, got " + std::to_string(v));
    }
  };
  unit("lambda_d", cfg.lambda_d);
  unit("lambda_g", cfg.lambda_g);
  positive("tau", cfg.tau);
  least_one("rounds", cfg.rounds);
  if (cfg.s_per_round < 0) {
    throw ConfigError("s_per_round must be >= 0 (0 = dataset default), got " +
                      std::to_string(cfg.s_per_round));
  }
  least_one("batch_size", cfg.batch_size);
  least_one("stage2_epochs", cfg.stage2_epochs);
  positive("lr_g", cfg.lr_g);
  positive("lr_d", cfg.lr_d);
  positive("lr_task", cfg.lr_task);
  least_one("width", cfg.width);
  const std::pair<const char*, int> staff[] = {
      {"gen_audio_layers", cfg.gen_audio_layers},   {"gen_audio_heads", cfg.gen_audio_heads},
      {"gen_visual_layers", cfg.gen_visual_layers}, {"gen_visual_heads", cfg.gen_visual_heads},
      {"disc_audio_layers", cfg.disc_audio_layers}, {"disc_audio_heads", cfg.disc_audio_heads},
      {"disc_visual_layers", cfg.disc_visual_layers}, {"disc_visual_heads", cfg.disc_visual_heads},
      {"msa_audio_layers", cfg.msa_audio_layers},   {"msa_audio_heads", cfg.msa_audio_heads},
      {"msa_visual_layers", cfg.msa_visual_layers}, {"msa_visual_heads", cfg.msa_visual_heads}};
  for (const auto& [name, v] : staff) least_one(name, v);
  // Generator and discriminator towers run at `width`; their head counts must
  // divide it.  The fusion-head stacks run at the raw modality dims, which are
  // dataset properties, so those are checked when the head is built.
  const std::pair<const char*, int> width_heads[] = {
      {"gen_audio_heads", cfg.gen_audio_heads},
      {"gen_visual_heads", cfg.gen_visual_heads},
      {"disc_audio_heads", cfg.disc_audio_heads},
      {"disc_visual_heads", cfg.disc_visual_heads}};
  for (const auto& [name, v] : width_heads) {
    if (cfg.width % v != 0) {
      throw ConfigError(std::string(name) + " = " + std::to_string(v) +
                        " must divide width = " + std::to_string(cfg.width));
    }
  }
  if (cfg.classes != 0 && cfg.classes != 2 && cfg.classes != 7) {
    throw ConfigError("classes must be 0 (regression), 2, or 7, got " + std::to_string(cfg.classes));
  }
  scenario_from_string(cfg.scenario);  // throws on unknown name
  if (cfg.dataset.rfind("preset:", 0) == 0) {
    if (cfg.dataset.size() <= 7) throw ConfigError("dataset: preset name missing after 'preset:'");
  } else if (cfg.dataset.rfind("file:", 0) == 0) {
    if (cfg.dataset.size() <= 5) throw ConfigError("dataset: path missing after 'file:'");
  } else {
    throw ConfigError("dataset must start with 'preset:' or 'file:', got '" + cfg.dataset + "'");
  }
  if (cfg.stage2_client_labels && cfg.classes != 0) {
    throw ConfigError("stage2_client_labels supports regression only (classes = 0)");
  }
}

Federation load_dataset(const TrainConfig& cfg) {
  if (cfg.dataset.rfind("preset:", 0) == 0) {
    FederationSpec spec = preset_spec(cfg.dataset.substr(7));
    spec.seed = cfg.seed;
    return make_federation(spec);
  }
  return ingest_features(cfg.dataset.substr(5));
}

int resolve_s(const TrainConfig& cfg, const Federation& fed) {
  const int train_clients = static_cast<int>(fed.client_indices(Split::train).size());
  if (cfg.s_per_round > 0) {
    if (cfg.s_per_round > train_clients) {
      throw ConfigError("s_per_round = " + std::to_string(cfg.s_per_round) + " exceeds the " +
                        std::to_string(train_clients) + " training clients");
    }
    return cfg.s_per_round;
  }
  const int family_default = cfg.dataset.rfind("preset:mosei", 0) == 0 ? 5 : 10;
  return std::min(family_default, train_clients);
}

ProtocolConfig protocol_config(const TrainConfig& cfg) {
  ProtocolConfig p;
  p.lambda_d = cfg.lambda_d;
  p.lambda_g = cfg.lambda_g;
  p.tau = cfg.tau;
  p.lr_g = cfg.lr_g;
  p.lr_d = cfg.lr_d;
  p.lr_task = cfg.lr_task;
  p.batch_size = cfg.batch_size;
  p.contrastive_standard_denominator = cfg.contrastive_standard_denominator;
  p.count_text_echo = cfg.count_text_echo;
  p.scenario = scenario_from_string(cfg.scenario);
  p.stage2_client_labels = cfg.stage2_client_labels;
  p.classes = cfg.classes;
  return p;
}

ServerBuild server_build(const TrainConfig& cfg, const Federation& fed) {
  ServerBuild b;
  b.d_t = fed.d_t;
  b.d_a = fed.d_a;
  b.d_v = fed.d_v;
  b.len_a = fed.len_a;
  b.len_v = fed.len_v;
  b.width = cfg.width;
  b.gen_audio_layers = cfg.gen_audio_layers;
  b.gen_audio_heads = cfg.gen_audio_heads;
  b.gen_visual_layers = cfg.gen_visual_layers;
  b.gen_visual_heads = cfg.gen_visual_heads;
  b.disc_audio_layers = cfg.disc_audio_layers;
  b.disc_audio_heads = cfg.disc_audio_heads;
  b.disc_visual_layers = cfg.disc_visual_layers;
  b.disc_visual_heads = cfg.disc_visual_heads;
  b.msa_audio_layers = cfg.msa_audio_layers;
  b.msa_audio_heads = cfg.msa_audio_heads;
  b.msa_visual_layers = cfg.msa_visual_layers;
  b.msa_visual_heads = cfg.msa_visual_heads;
  b.classes = cfg.classes;
  return b;
}

std::string version_string() { return "hydisc 0.1.0"; }

std::string render_config(const TrainConfig& cfg) {
  std::string out;
  auto kv = [&out](const char* key, const std::string& value) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  kv("lambda_d", num(cfg.lambda_d));
  kv("lambda_g", num(cfg.lambda_g));
  kv("tau", num(cfg.tau));
  kv("rounds", std::to_string(cfg.rounds));
  kv("s_per_round", std::to_string(cfg.s_per_round));
  kv("batch_size", std::to_string(cfg.batch_size));
  kv("stage2_epochs", std::to_string(cfg.stage2_epochs));
  kv("lr_g", num(cfg.lr_g));
  kv("lr_d", num(cfg.lr_d));
  kv("lr_task", num(cfg.lr_task));
  kv("width", std::to_string(cfg.width));
  kv("gen_audio_layers", std::to_string(cfg.gen_audio_layers));
  kv("gen_audio_heads", std::to_string(cfg.gen_audio_heads));
  kv("gen_visual_layers", std::to_string(cfg.gen_visual_layers));
  kv("gen_visual_heads", std::to_string(cfg.gen_visual_heads));
  kv("disc_audio_layers", std::to_string(cfg.disc_audio_layers));
  kv("disc_audio_heads", std::to_string(cfg.disc_audio_heads));
  kv("disc_visual_layers", std::to_string(cfg.disc_visual_layers));
  kv("disc_visual_heads", std::to_string(cfg.disc_visual_heads));
  kv("msa_audio_layers", std::to_string(cfg.msa_audio_layers));
  kv("msa_audio_heads", std::to_string(cfg.msa_audio_heads));
  kv("msa_visual_layers", std::to_string(cfg.msa_visual_layers));
  kv("msa_visual_heads", std::to_string(cfg.msa_visual_heads));
  kv("classes", std::to_string(cfg.classes));
  kv("scenario", cfg.scenario);
  kv("seed", std::to_string(cfg.seed));
  kv("dataset", cfg.dataset);
  kv("contrastive_standard_denominator", cfg.contrastive_standard_denominator ? "true" : "false");
  kv("count_text_echo", cfg.count_text_echo ? "true" : "false");
  kv("stage2_client_labels", cfg.stage2_client_labels ? "true" : "false");
  return out;
}

}  // namespace hydisc
