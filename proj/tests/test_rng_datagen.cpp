// Random stream determinism (against the published splitmix64 / FNV-1a
// reference outputs), seed derivation, synthetic federation invariants,
// privacy grants, and the dataset file round-trip.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "hydisc/datagen.hpp"
#include "hydisc/rng.hpp"

using namespace hydisc;

namespace {

// Independent reference: splitmix64 as published (Steele, Lea, Flood 2014).
struct SplitMix64 {
  std::uint64_t s;
  std::uint64_t next() {
    s += 0x9e3779b97f4a7c15ull;
    std::uint64_t x = s;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }
};

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

const char* kTinyHeader =
    "{\"version\":1,\"dims\":{\"text\":2,\"audio\":2,\"visual\":2},"
    "\"lengths\":{\"text\":2,\"audio\":2,\"visual\":2}}\n";

std::string tiny_record(int client, const char* split, const char* y) {
  std::string s = "{\"client\":" + std::to_string(client) + ",\"split\":\"" + split +
                  "\",\"y\":" + y +
                  ",\"text\":[[1,2],[3,4]],\"audio\":[[1,0],[0,1]],\"visual\":[[0,1],[1,0]]}\n";
  return s;
}

}  // namespace

TEST_CASE("uniform generator matches the published splitmix64 outputs") {
  // First outputs for seed 0 are the widely circulated reference values.
  RandomStream rs(0);
  CHECK(rs.next_u64() == 0xe220a8397b1dcdafull);
  CHECK(rs.next_u64() == 0x6e789e6aa1b965f4ull);
  CHECK(rs.next_u64() == 0x06c45d188009454full);

  for (std::uint64_t seed : {std::uint64_t{1}, std::uint64_t{42}, std::uint64_t{0xdeadbeef}}) {
    RandomStream stream(seed);
    SplitMix64 ref{seed};
    for (int i = 0; i < 16; ++i) CHECK(stream.next_u64() == ref.next());
  }
}

TEST_CASE("byte hash matches the published FNV-1a vectors and chains") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ull);
  // Incremental hashing composes: seeding with a prefix hash continues it.
  CHECK(fnv1a("b", 1, fnv1a("a")) == fnv1a("ab"));
}

TEST_CASE("derived seeds separate tags, arities, and argument order") {
  const std::uint64_t m = 42;
  CHECK(derive_seed(m, "alpha") == derive_seed(m, "alpha"));
  CHECK(derive_seed(m, "alpha") != derive_seed(m, "beta"));
  CHECK(derive_seed(m, "alpha") != derive_seed(m + 1, "alpha"));
  CHECK(derive_seed(m, "t", 1) != derive_seed(m, "t"));
  CHECK(derive_seed(m, "t", 1, 2) != derive_seed(m, "t", 1));
  CHECK(derive_seed(m, "t", 1, 2) != derive_seed(m, "t", 2, 1));
  CHECK(derive_seed(m, "t", 1, 2, 3) != derive_seed(m, "t", 1, 2));
  CHECK(derive_seed(m, "t", 1, 2, 3) == derive_seed(m, "t", 1, 2, 3));
}

TEST_CASE("uniform, index, and gaussian draws honour their ranges") {
  RandomStream rs(7);
  for (int i = 0; i < 1000; ++i) {
    const double d = rs.next_double();
    CHECK(d >= 0.0);
    CHECK(d < 1.0);
  }
  for (int i = 0; i < 1000; ++i) {
    const double u = rs.next_uniform(-2.0, 5.0);
    CHECK(u >= -2.0);
    CHECK(u < 5.0);
  }
  for (int i = 0; i < 1000; ++i) CHECK(rs.next_index(13) < 13);
  for (int i = 0; i < 32; ++i) CHECK(rs.next_index(1) == 0);
  CHECK_THROWS_AS(rs.next_index(0), std::invalid_argument);
}

TEST_CASE("gaussian draws have unit-normal moments") {
  RandomStream rs(123);
  const int n = 20000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rs.next_gaussian();
    sum += g;
    sum2 += g * g;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("gamma draws match the distribution moments") {
  SUBCASE("alpha above one") {
    RandomStream rs(5);
    const double alpha = 2.5;
    const int n = 20000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double g = rs.next_gamma(alpha);
      CHECK(g > 0.0);
      sum += g;
      sum2 += g * g;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean - alpha) < 0.1);
    CHECK(std::abs(var - alpha) < 0.25);
  }
  SUBCASE("alpha below one uses the boosted branch") {
    RandomStream rs(6);
    const double alpha = 0.5;
    const int n = 20000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += rs.next_gamma(alpha);
    CHECK(std::abs(sum / n - alpha) < 0.05);
  }
  SUBCASE("non-positive alpha is rejected") {
    RandomStream rs(7);
    CHECK_THROWS_AS(rs.next_gamma(0.0), std::invalid_argument);
    CHECK_THROWS_AS(rs.next_gamma(-1.0), std::invalid_argument);
  }
}

TEST_CASE("sampling without replacement yields ascending distinct indices") {
  RandomStream rs(9);
  std::set<std::size_t> seen;
  for (int trial = 0; trial < 200; ++trial) {
    const auto picks = rs.sample_without_replacement(10, 4);
    REQUIRE(picks.size() == 4);
    for (std::size_t i = 0; i < picks.size(); ++i) {
      CHECK(picks[i] < 10);
      if (i > 0) CHECK(picks[i - 1] < picks[i]);
      seen.insert(picks[i]);
    }
  }
  CHECK(seen.size() == 10);  // every index is reachable

  const auto all = rs.sample_without_replacement(5, 5);
  REQUIRE(all.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(all[i] == i);
  CHECK(rs.sample_without_replacement(5, 0).empty());
  CHECK_THROWS_AS(rs.sample_without_replacement(3, 4), std::invalid_argument);

  RandomStream a(33), b(33);
  CHECK(a.sample_without_replacement(100, 7) == b.sample_without_replacement(100, 7));
}

TEST_CASE("polarity splits the label range at zero") {
  CHECK(polarity(-0.1) == Polarity::negative);
  CHECK(polarity(-3.0) == Polarity::negative);
  CHECK(polarity(0.0) == Polarity::non_negative);
  CHECK(polarity(3.0) == Polarity::non_negative);
  CHECK_THROWS_AS(polarity(3.1), ContractError);
  CHECK_THROWS_AS(polarity(-3.1), ContractError);
}

TEST_CASE("scenario and split names round-trip") {
  for (PrivacyScenario s : {PrivacyScenario::all_shareable, PrivacyScenario::audio_privacy,
                            PrivacyScenario::visual_privacy, PrivacyScenario::audio_visual_privacy}) {
    CHECK(scenario_from_string(to_string(s)) == s);
  }
  CHECK_THROWS_AS(scenario_from_string("bogus"), ConfigError);
  for (Split s : {Split::train, Split::valid, Split::test}) {
    CHECK(split_from_string(to_string(s)) == s);
  }
  CHECK_THROWS_AS(split_from_string("holdout"), ConfigError);
}

TEST_CASE("privacy scenarios mark exactly their protected modalities") {
  CHECK_FALSE(is_private(PrivacyScenario::all_shareable, Modality::audio));
  CHECK_FALSE(is_private(PrivacyScenario::all_shareable, Modality::visual));
  CHECK(is_private(PrivacyScenario::audio_privacy, Modality::audio));
  CHECK_FALSE(is_private(PrivacyScenario::audio_privacy, Modality::visual));
  CHECK_FALSE(is_private(PrivacyScenario::visual_privacy, Modality::audio));
  CHECK(is_private(PrivacyScenario::visual_privacy, Modality::visual));
  CHECK(is_private(PrivacyScenario::audio_visual_privacy, Modality::audio));
  CHECK(is_private(PrivacyScenario::audio_visual_privacy, Modality::visual));
  for (PrivacyScenario s : {PrivacyScenario::all_shareable, PrivacyScenario::audio_privacy,
                            PrivacyScenario::visual_privacy, PrivacyScenario::audio_visual_privacy}) {
    CHECK_FALSE(is_private(s, Modality::text));  // text is always shareable
  }
}

TEST_CASE("grants gate feature access by owner and scenario") {
  const ModalityGrant local = ModalityGrant::client_local(3);
  CHECK(local.covers(3, Modality::audio));
  CHECK(local.covers(3, Modality::visual));
  CHECK_FALSE(local.covers(2, Modality::audio));

  const ModalityGrant shared =
      ModalityGrant::scenario_shared(PrivacyScenario::visual_privacy, Modality::audio);
  CHECK(shared.covers(0, Modality::audio));
  CHECK(shared.covers(99, Modality::audio));
  CHECK_FALSE(shared.covers(0, Modality::visual));

  // A grant for a modality the scenario keeps private cannot be minted.
  CHECK_THROWS_AS(ModalityGrant::scenario_shared(PrivacyScenario::audio_privacy, Modality::audio),
                  AccessError);
  CHECK_THROWS_AS(
      ModalityGrant::scenario_shared(PrivacyScenario::audio_visual_privacy, Modality::visual),
      AccessError);
  // Text can always be shared.
  const ModalityGrant text_ok =
      ModalityGrant::scenario_shared(PrivacyScenario::audio_visual_privacy, Modality::text);
  CHECK(text_ok.covers(17, Modality::text));
}

TEST_CASE("private features expose metadata but guard the numbers") {
  Tensor body = Tensor::from_rows(2, 3, {1, 2, 3, 4, 5, 6});
  PrivateFeature pf(4, FeatureSequence::real(Modality::audio, body));
  CHECK(pf.owner() == 4);
  CHECK(pf.modality() == Modality::audio);
  CHECK(pf.length() == 2);
  CHECK(pf.dim() == 3);

  const FeatureSequence& opened = pf.open(ModalityGrant::client_local(4));
  CHECK(opened.body().at(1, 2) == 6.0);
  CHECK_THROWS_AS(pf.open(ModalityGrant::client_local(5)), AccessError);
  CHECK_THROWS_AS(
      pf.open(ModalityGrant::scenario_shared(PrivacyScenario::all_shareable, Modality::visual)),
      AccessError);
  CHECK_THROWS_AS(PrivateFeature(-1, FeatureSequence::real(Modality::audio, body)), ContractError);
}

TEST_CASE("presets pin the published client and sample counts") {
  const FederationSpec mosi_toy = preset_spec("mosi-toy");
  CHECK(mosi_toy.train.clients == 8);
  CHECK(mosi_toy.train.total_samples == 48);
  CHECK(mosi_toy.valid.clients == 2);
  CHECK(mosi_toy.valid.total_samples == 12);
  CHECK(mosi_toy.test.clients == 3);
  CHECK(mosi_toy.test.total_samples == 18);

  const FederationSpec mosei_toy = preset_spec("mosei-toy");
  CHECK(mosei_toy.train.clients == 6);
  CHECK(mosei_toy.train.total_samples == 36);
  CHECK(mosei_toy.valid.clients == 2);
  CHECK(mosei_toy.valid.total_samples == 12);
  CHECK(mosei_toy.test.clients == 2);
  CHECK(mosei_toy.test.total_samples == 12);

  const FederationSpec mosi = preset_spec("mosi");
  CHECK(mosi.train.clients == 52);
  CHECK(mosi.train.total_samples == 1284);
  CHECK(mosi.valid.clients == 10);
  CHECK(mosi.valid.total_samples == 229);
  CHECK(mosi.test.clients == 31);
  CHECK(mosi.test.total_samples == 686);

  const FederationSpec mosei = preset_spec("mosei");
  CHECK(mosei.train.clients == 150);
  CHECK(mosei.train.total_samples == 16326);
  CHECK(mosei.valid.clients == 50);
  CHECK(mosei.valid.total_samples == 1871);
  CHECK(mosei.test.clients == 100);
  CHECK(mosei.test.total_samples == 4659);

  CHECK_THROWS_AS(preset_spec("imagenet"), ConfigError);
}

TEST_CASE("built federations honour the requested partition") {
  for (const char* name : {"mosi-toy", "mosei-toy"}) {
    const FederationSpec spec = preset_spec(name);
    const Federation fed = make_federation(spec);
    CHECK(fed.d_t == spec.d_t);
    CHECK(fed.d_a == spec.d_a);
    CHECK(fed.d_v == spec.d_v);
    CHECK(fed.len_t == spec.len_t);

    std::set<int> ids;
    for (const auto& [split, want] : {std::pair{Split::train, spec.train},
                                      std::pair{Split::valid, spec.valid},
                                      std::pair{Split::test, spec.test}}) {
      const auto idx = fed.client_indices(split);
      CHECK(static_cast<int>(idx.size()) == want.clients);
      CHECK(fed.total_samples(split) == want.total_samples);
      for (int i : idx) {
        const ClientDataset& c = fed.clients[static_cast<std::size_t>(i)];
        CHECK(c.split() == split);
        CHECK(c.size() >= 1);
        CHECK(ids.insert(c.client_id()).second);  // ids unique across splits
        for (const Sample& s : c.samples()) {
          CHECK(s.y >= -3.0);
          CHECK(s.y <= 3.0);
          CHECK(s.label_polarity == polarity(s.y));
          CHECK(s.audio.owner() == c.client_id());
          CHECK(s.visual.owner() == c.client_id());
          CHECK(s.text.provenance() == Provenance::real);
          CHECK(s.text.dim() == spec.d_t);
          CHECK(s.audio.dim() == spec.d_a);
          CHECK(s.visual.dim() == spec.d_v);
        }
      }
    }
  }
}

TEST_CASE("equal partitioning balances clients to within one sample") {
  FederationSpec spec = preset_spec("mosi-toy");
  spec.train = {5, 23};
  spec.equal_samples_per_client = true;
  const Federation fed = make_federation(spec);
  int lo = 1 << 30, hi = 0, total = 0;
  for (int i : fed.client_indices(Split::train)) {
    const int n = fed.clients[static_cast<std::size_t>(i)].size();
    lo = std::min(lo, n);
    hi = std::max(hi, n);
    total += n;
  }
  CHECK(total == 23);
  CHECK(hi - lo <= 1);
}

TEST_CASE("federation hashing separates seeds and processes") {
  FederationSpec spec = preset_spec("mosi-toy");
  const std::uint64_t h1 = federation_hash(make_federation(spec));
  const std::uint64_t h2 = federation_hash(make_federation(spec));
  CHECK(h1 == h2);

  spec.seed = 43;
  CHECK(federation_hash(make_federation(spec)) != h1);
  spec.seed = 42;
  spec.noise_sigma = 0.2;
  CHECK(federation_hash(make_federation(spec)) != h1);
}

TEST_CASE("labels are linearly recoverable from the feature summaries") {
  // The synthetic process routes the latent sentiment into every modality,
  // so a least-squares probe on the summary rows must explain well over half
  // of the label variance. The solver below is self-contained (normal
  // equations + Gaussian elimination with partial pivoting).
  const Federation fed = make_federation(preset_spec("mosi-toy"));
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  for (const ClientDataset& c : fed.clients) {
    const ModalityGrant grant = ModalityGrant::client_local(c.client_id());
    for (const Sample& s : c.samples()) {
      std::vector<double> x;
      for (const Tensor* cls :
           {&s.text.cls(), &s.audio.open(grant).cls(), &s.visual.open(grant).cls()}) {
        for (double v : cls->values()) x.push_back(v);
      }
      x.push_back(1.0);
      xs.push_back(std::move(x));
      ys.push_back(s.y);
    }
  }
  const std::size_t n = xs.size(), p = xs[0].size();
  REQUIRE(n > 2 * p);  // enough data that a fit is not a tautology

  std::vector<std::vector<double>> a(p, std::vector<double>(p + 1, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < p; ++r) {
      for (std::size_t c = 0; c < p; ++c) a[r][c] += xs[i][r] * xs[i][c];
      a[r][p] += xs[i][r] * ys[i];
    }
  }
  for (std::size_t r = 0; r < p; ++r) a[r][r] += 1e-8;
  for (std::size_t col = 0; col < p; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < p; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    }
    std::swap(a[col], a[piv]);
    REQUIRE(std::abs(a[col][col]) > 1e-12);
    for (std::size_t r = 0; r < p; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c <= p; ++c) a[r][c] -= f * a[col][c];
    }
  }
  std::vector<double> beta(p);
  for (std::size_t r = 0; r < p; ++r) beta[r] = a[r][p] / a[r][r];

  double mean_y = 0.0;
  for (double y : ys) mean_y += y;
  mean_y /= static_cast<double>(n);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double pred = 0.0;
    for (std::size_t j = 0; j < p; ++j) pred += beta[j] * xs[i][j];
    ss_res += (ys[i] - pred) * (ys[i] - pred);
    ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
  }
  REQUIRE(ss_tot > 0.0);
  const double r2 = 1.0 - ss_res / ss_tot;
  INFO("probe R^2 = ", r2, " over ", n, " samples, ", p, " coefficients");
  CHECK(r2 >= 0.5);
}

TEST_CASE("dataset files round-trip bit for bit") {
  const Federation fed = make_federation(preset_spec("mosi-toy"));
  const auto path = temp_file("hydisc_roundtrip.jsonl");
  export_federation(fed, path.string());
  const Federation back = ingest_features(path.string());
  CHECK(federation_hash(back) == federation_hash(fed));
  CHECK(back.clients.size() == fed.clients.size());
  for (std::size_t i = 0; i < fed.clients.size(); ++i) {
    CHECK(back.clients[i].client_id() == fed.clients[i].client_id());
    CHECK(back.clients[i].split() == fed.clients[i].split());
    CHECK(back.clients[i].size() == fed.clients[i].size());
  }
  std::filesystem::remove(path);
}

TEST_CASE("dataset ingestion rejects malformed files with located errors") {
  SUBCASE("missing header") {
    const auto p = temp_file("hydisc_bad_empty.jsonl");
    write_file(p, "");
    CHECK_THROWS_AS(ingest_features(p.string()), ParseError);
    std::filesystem::remove(p);
  }
  SUBCASE("header without dims") {
    const auto p = temp_file("hydisc_bad_header.jsonl");
    write_file(p, "{\"version\":1}\n" + tiny_record(0, "train", "1.0"));
    CHECK_THROWS_AS(ingest_features(p.string()), ParseError);
    std::filesystem::remove(p);
  }
  SUBCASE("no records") {
    const auto p = temp_file("hydisc_bad_norecords.jsonl");
    write_file(p, kTinyHeader);
    CHECK_THROWS_AS(ingest_features(p.string()), ParseError);
    std::filesystem::remove(p);
  }
  SUBCASE("invalid JSON names the line") {
    const auto p = temp_file("hydisc_bad_json.jsonl");
    write_file(p, std::string(kTinyHeader) + tiny_record(0, "train", "1.0") + "{oops\n");
    try {
      ingest_features(p.string());
      FAIL("expected a parse failure");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
    std::filesystem::remove(p);
  }
  SUBCASE("client in two splits") {
    const auto p = temp_file("hydisc_bad_splits.jsonl");
    write_file(p, std::string(kTinyHeader) + tiny_record(0, "train", "1.0") +
                      tiny_record(0, "valid", "0.5"));
    try {
      ingest_features(p.string());
      FAIL("expected a parse failure");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("two splits") != std::string::npos);
    }
    std::filesystem::remove(p);
  }
  SUBCASE("label out of range") {
    const auto p = temp_file("hydisc_bad_label.jsonl");
    write_file(p, std::string(kTinyHeader) + tiny_record(0, "train", "3.5"));
    CHECK_THROWS_AS(ingest_features(p.string()), ParseError);
    std::filesystem::remove(p);
  }
  SUBCASE("feature row of the wrong width") {
    const auto p = temp_file("hydisc_bad_width.jsonl");
    write_file(p, std::string(kTinyHeader) +
                      "{\"client\":0,\"split\":\"train\",\"y\":1.0,\"text\":[[1],[3,4]],"
                      "\"audio\":[[1,0],[0,1]],\"visual\":[[0,1],[1,0]]}\n");
    CHECK_THROWS_AS(ingest_features(p.string()), ParseError);
    std::filesystem::remove(p);
  }
  SUBCASE("negative client id") {
    const auto p = temp_file("hydisc_bad_client.jsonl");
    write_file(p, std::string(kTinyHeader) + tiny_record(-1, "train", "1.0"));
    CHECK_THROWS_AS(ingest_features(p.string()), ParseError);
    std::filesystem::remove(p);
  }
}

TEST_CASE("federation lookup helpers") {
  const Federation fed = make_federation(preset_spec("mosi-toy"));
  const int some_id = fed.clients.front().client_id();
  CHECK(fed.client_by_id(some_id).client_id() == some_id);
  CHECK_THROWS_AS(fed.client_by_id(123456), ContractError);
}

TEST_CASE("federation specs validate their fields") {
  FederationSpec spec = preset_spec("mosi-toy");
  spec.train.clients = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = preset_spec("mosi-toy");
  spec.train.total_samples = spec.train.clients - 1;  // fewer samples than clients
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = preset_spec("mosi-toy");
  spec.alpha = 0.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = preset_spec("mosi-toy");
  spec.d_t = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = preset_spec("mosi-toy");
  spec.noise_sigma = -0.5;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}
