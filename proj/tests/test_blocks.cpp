#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "hydisc/blocks.hpp"
#include "hydisc/errors.hpp"
#include "hydisc/rng.hpp"
#include "testutil.hpp"

using namespace hydisc;
using testutil::check_gradients;
using testutil::random_constant;
using testutil::random_parameter;

namespace {

// Independent attention oracle: plain loops, no tensor ops.
std::vector<double> attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                                     bool causal) {
  const int L = q.rows(), Lk = k.rows(), dk = q.cols(), dv = v.cols();
  std::vector<double> out(static_cast<std::size_t>(L) * dv, 0.0);
  for (int i = 0; i < L; ++i) {
    std::vector<double> logits(static_cast<std::size_t>(Lk));
    const int limit = causal ? i + 1 : Lk;
    double mx = -1e300;
    for (int j = 0; j < limit; ++j) {
      double dot = 0.0;
      for (int t = 0; t < dk; ++t) dot += q.at(i, t) * k.at(j, t);
      logits[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(dk));
      mx = std::max(mx, logits[static_cast<std::size_t>(j)]);
    }
    double denom = 0.0;
    for (int j = 0; j < limit; ++j) denom += std::exp(logits[static_cast<std::size_t>(j)] - mx);
    for (int j = 0; j < limit; ++j) {
      const double w = std::exp(logits[static_cast<std::size_t>(j)] - mx) / denom;
      for (int t = 0; t < dv; ++t) out[static_cast<std::size_t>(i * dv + t)] += w * v.at(j, t);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("scaled_attention matches the brute-force oracle on 100 random instances") {
  RandomStream rs(201);
  for (int iter = 0; iter < 100; ++iter) {
    const int L = 1 + static_cast<int>(rs.next_index(5));
    const int Lk = 1 + static_cast<int>(rs.next_index(5));
    const int dk = 1 + static_cast<int>(rs.next_index(4));
    const int dv = 1 + static_cast<int>(rs.next_index(4));
    const bool causal = (iter % 2 == 0);
    const Tensor q = random_constant(rs, L, dk);
    const Tensor k = random_constant(rs, causal ? L : Lk, dk);
    const Tensor v = random_constant(rs, causal ? L : Lk, dv);
    const Tensor got = scaled_attention(q, k, v, causal);
    const std::vector<double> want = attention_oracle(q, k, v, causal);
    REQUIRE(got.rows() == L);
    REQUIRE(got.cols() == dv);
    for (int i = 0; i < L; ++i) {
      for (int t = 0; t < dv; ++t) {
        CHECK(std::abs(got.at(i, t) - want[static_cast<std::size_t>(i * dv + t)]) <= 1e-10);
      }
    }
  }
}

TEST_CASE("causal attention output is bitwise independent of future positions") {
  RandomStream rs(202);
  const int L = 6, d = 4;
  const Tensor q = random_constant(rs, L, d);
  const Tensor k = random_constant(rs, L, d);
  const Tensor v = random_constant(rs, L, d);
  const Tensor full = scaled_attention(q, k, v, true);
  for (int prefix = 1; prefix <= L; ++prefix) {
    const Tensor part = scaled_attention(slice_rows(q, 0, prefix), slice_rows(k, 0, prefix),
                                         slice_rows(v, 0, prefix), true);
    for (int i = 0; i < prefix; ++i) {
      for (int t = 0; t < d; ++t) {
        // bitwise: the masked softmax must not even read future rows
        CHECK(part.at(i, t) == full.at(i, t));
      }
    }
  }
}

TEST_CASE("multi-head attention: shape, determinism, and gradients") {
  RandomStream rs(203);
  AttentionParams p = make_attention(4, 6, 2, rs);
  Tensor x = random_parameter(rs, 5, 4);
  Tensor c = random_parameter(rs, 3, 6);
  const Tensor w = random_constant(rs, 5, 4);

  const Tensor y1 = multi_head_attention(x, c, p, false);
  const Tensor y2 = multi_head_attention(x, c, p, false);
  REQUIRE(y1.rows() == 5);
  REQUIRE(y1.cols() == 4);
  CHECK(std::memcmp(y1.values().data(), y2.values().data(), y1.size() * sizeof(double)) == 0);

  std::vector<Tensor> params{x, c, p.wq, p.wk, p.wv, p.wo};
  const auto r = check_gradients([&] { return sum_all(mul(multi_head_attention(x, c, p, false), w)); },
                                 params);
  CHECK_MESSAGE(r.ok, "multi_head_attention: ", r.worst);
}

TEST_CASE("attention head count must divide the model width") {
  RandomStream rs(204);
  CHECK_THROWS_AS(make_attention(6, 6, 4, rs), ConfigError);
}

TEST_CASE("intra-modality attention is causal") {
  RandomStream rs(205);
  AttentionParams p = make_attention(4, 4, 2, rs);
  const Tensor z = random_constant(rs, 5, 4);
  const Tensor full = intra_modality_attention(z, p);
  const Tensor head = intra_modality_attention(slice_rows(z, 0, 3), p);
  for (int i = 0; i < 3; ++i) {
    for (int t = 0; t < 4; ++t) CHECK(head.at(i, t) == full.at(i, t));
  }
}

TEST_CASE("inter-modality attention attends to the whole condition") {
  RandomStream rs(206);
  AttentionParams p = make_attention(4, 6, 2, rs);
  const Tensor z = random_constant(rs, 2, 4);
  const Tensor cond = random_constant(rs, 5, 6);
  const Tensor full = inter_modality_attention(z, cond, p);
  const Tensor truncated = inter_modality_attention(z, slice_rows(cond, 0, 3), p);
  // Cutting condition rows must change the result (no causal mask hides them).
  bool any_diff = false;
  for (int i = 0; i < 2 && !any_diff; ++i) {
    for (int t = 0; t < 4 && !any_diff; ++t) {
      any_diff = truncated.at(i, t) != full.at(i, t);
    }
  }
  CHECK(any_diff);
}

TEST_CASE("transformer layer gradients, with and without cross-attention") {
  RandomStream rs(207);
  Tensor x = random_parameter(rs, 4, 4, 0.5);
  Tensor cond = random_parameter(rs, 3, 6, 0.5);
  const Tensor w = random_constant(rs, 4, 4);

  SUBCASE("self-attention only") {
    TransformerLayerParams layer = make_transformer_layer(4, 2, true, std::nullopt, rs);
    ParamSet ps = layer.params();
    std::vector<Tensor> params{x};
    for (std::size_t i = 0; i < ps.count(); ++i) params.push_back(ps.tensor(i));
    const auto r = check_gradients(
        [&] { return sum_all(mul(transformer_layer(x, std::nullopt, layer), w)); }, params);
    CHECK_MESSAGE(r.ok, "transformer_layer/self: ", r.worst);
  }
  SUBCASE("with cross-attention") {
    TransformerLayerParams layer = make_transformer_layer(4, 2, true, 6, rs);
    ParamSet ps = layer.params();
    std::vector<Tensor> params{x, cond};
    for (std::size_t i = 0; i < ps.count(); ++i) params.push_back(ps.tensor(i));
    const auto r = check_gradients(
        [&] { return sum_all(mul(transformer_layer(x, std::optional<Tensor>(cond), layer), w)); },
        params);
    CHECK_MESSAGE(r.ok, "transformer_layer/cross: ", r.worst);
  }
  SUBCASE("condition without cross-attention is a contract violation") {
    TransformerLayerParams layer = make_transformer_layer(4, 2, true, std::nullopt, rs);
    CHECK_THROWS_AS(transformer_layer(x, std::optional<Tensor>(cond), layer), ConfigError);
  }
}

TEST_CASE("gated attention: value formula, range, and gradients") {
  RandomStream rs(208);
  GateParams g = make_gate(5, rs);
  Tensor h = random_parameter(rs, 1, 5);
  const auto [gated, gate] = gated_attention(h, g);
  REQUIRE(gate.cols() == 5);
  for (int j = 0; j < 5; ++j) {
    CHECK(gate.at(0, j) > 0.0);
    CHECK(gate.at(0, j) < 1.0);
    // gated = sigmoid(hW + b) .* h, elementwise
    double pre = g.b.at(0, j);
    for (int t = 0; t < 5; ++t) pre += h.at(0, t) * g.w.at(t, j);
    const double sig = 1.0 / (1.0 + std::exp(-pre));
    CHECK(std::abs(gate.at(0, j) - sig) <= 1e-12);
    CHECK(std::abs(gated.at(0, j) - sig * h.at(0, j)) <= 1e-12);
  }
  const Tensor w = random_constant(rs, 1, 5);
  const auto r = check_gradients([&] { return sum_all(mul(gated_attention(h, g).first, w)); },
                                 {h, g.w, g.b});
  CHECK_MESSAGE(r.ok, "gated_attention: ", r.worst);
}

TEST_CASE("sinusoidal positions: deterministic, bounded, distinct rows") {
  const Tensor p1 = sinusoidal_positions(6, 8);
  const Tensor p2 = sinusoidal_positions(6, 8);
  REQUIRE(p1.rows() == 6);
  REQUIRE(p1.cols() == 8);
  CHECK(std::memcmp(p1.values().data(), p2.values().data(), p1.size() * sizeof(double)) == 0);
  for (double v : p1.values()) {
    CHECK(v <= 1.0);
    CHECK(v >= -1.0);
  }
  bool rows_differ = false;
  for (int j = 0; j < 8 && !rows_differ; ++j) rows_differ = p1.at(0, j) != p1.at(1, j);
  CHECK(rows_differ);
}

TEST_CASE("xavier_uniform stays within its fan bound and is seed-deterministic") {
  RandomStream a(209), b(209);
  const Tensor wa = xavier_uniform(7, 5, a);
  const Tensor wb = xavier_uniform(7, 5, b);
  CHECK(std::memcmp(wa.values().data(), wb.values().data(), wa.size() * sizeof(double)) == 0);
  const double bound = std::sqrt(6.0 / (7 + 5));
  for (double v : wa.values()) {
    CHECK(v < bound);
    CHECK(v > -bound);
  }
}
