#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "hydisc/errors.hpp"
#include "hydisc/rng.hpp"
#include "hydisc/tensor.hpp"
#include "testutil.hpp"

using namespace hydisc;
using testutil::check_gradients;
using testutil::random_constant;
using testutil::random_parameter;

namespace {

// Generic scalarizer: weighted sum with fixed random weights, so every output
// element contributes a distinct gradient path.
Tensor weighted(const Tensor& t, const Tensor& w) { return sum_all(mul(t, w)); }

}  // namespace

TEST_CASE("construction and element access") {
  const Tensor t = Tensor::from_rows(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(0, 0) == 1.0);
  CHECK(t.at(1, 2) == 6.0);
  CHECK(Tensor::scalar(7.5).item() == 7.5);
  CHECK_THROWS_AS(Tensor::from_rows(2, 2, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS((void)t.item(), ContractError);
  CHECK_THROWS_AS((void)t.at(2, 0), DimensionError);
}

TEST_CASE("matmul matches a brute-force triple loop on 100 random instances") {
  RandomStream rs(101);
  for (int iter = 0; iter < 100; ++iter) {
    const int m = 1 + static_cast<int>(rs.next_index(5));
    const int k = 1 + static_cast<int>(rs.next_index(5));
    const int n = 1 + static_cast<int>(rs.next_index(5));
    const Tensor a = random_constant(rs, m, k);
    const Tensor b = random_constant(rs, k, n);
    const Tensor c = matmul(a, b);
    REQUIRE(c.rows() == m);
    REQUIRE(c.cols() == n);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        double want = 0.0;
        for (int t = 0; t < k; ++t) want += a.at(i, t) * b.at(t, j);
        CHECK(std::abs(c.at(i, j) - want) <= 1e-10);
      }
    }
  }
}

TEST_CASE("softmax_rows matches the direct formula on 100 random instances") {
  RandomStream rs(102);
  for (int iter = 0; iter < 100; ++iter) {
    const int m = 1 + static_cast<int>(rs.next_index(4));
    const int n = 1 + static_cast<int>(rs.next_index(6));
    const Tensor a = random_constant(rs, m, n, 3.0);
    const Tensor s = softmax_rows(a);
    for (int i = 0; i < m; ++i) {
      double mx = a.at(i, 0);
      for (int j = 1; j < n; ++j) mx = std::max(mx, a.at(i, j));
      double denom = 0.0;
      for (int j = 0; j < n; ++j) denom += std::exp(a.at(i, j) - mx);
      double row_sum = 0.0;
      for (int j = 0; j < n; ++j) {
        const double want = std::exp(a.at(i, j) - mx) / denom;
        CHECK(std::abs(s.at(i, j) - want) <= 1e-10);
        row_sum += s.at(i, j);
      }
      CHECK(std::abs(row_sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("gradients: binary and unary elementwise ops") {
  RandomStream rs(103);
  Tensor a = random_parameter(rs, 3, 4);
  Tensor b = random_parameter(rs, 3, 4);
  const Tensor w = random_constant(rs, 3, 4);

  auto run = [&](const char* name, const std::function<Tensor()>& f) {
    CAPTURE(name);
    const auto r = check_gradients(f, {a, b});
    CHECK_MESSAGE(r.ok, name, ": ", r.worst);
  };
  run("add", [&] { return weighted(add(a, b), w); });
  run("sub", [&] { return weighted(sub(a, b), w); });
  run("mul", [&] { return weighted(mul(a, b), w); });
  run("scale", [&] { return weighted(scale(a, -1.7), w); });
  run("add_scalar", [&] { return weighted(add_scalar(a, 0.3), w); });
  run("exp", [&] { return weighted(hydisc::exp(scale(a, 0.5)), w); });
  run("sigmoid", [&] { return weighted(sigmoid(a), w); });
  run("gelu", [&] { return weighted(gelu(a), w); });
  run("sum_all", [&] { return sum_all(a); });
  run("mean_all", [&] { return mean_all(a); });
  run("softmax", [&] { return weighted(softmax_rows(a), w); });
}

TEST_CASE("gradients: matmul, transpose, broadcasting") {
  RandomStream rs(104);
  Tensor a = random_parameter(rs, 3, 4);
  Tensor b = random_parameter(rs, 4, 2);
  Tensor r = random_parameter(rs, 1, 4);
  const Tensor w32 = random_constant(rs, 3, 2);
  const Tensor w43 = random_constant(rs, 4, 3);
  const Tensor w34 = random_constant(rs, 3, 4);

  auto res1 = check_gradients([&] { return weighted(matmul(a, b), w32); }, {a, b});
  CHECK_MESSAGE(res1.ok, "matmul: ", res1.worst);
  auto res2 = check_gradients([&] { return weighted(transpose(a), w43); }, {a});
  CHECK_MESSAGE(res2.ok, "transpose: ", res2.worst);
  auto res3 = check_gradients([&] { return weighted(add_rowvec(a, r), w34); }, {a, r});
  CHECK_MESSAGE(res3.ok, "add_rowvec: ", res3.worst);
}

TEST_CASE("gradients: log and clamps away from their kinks") {
  RandomStream rs(105);
  // log needs positive input: shift well away from zero.
  Tensor a = random_parameter(rs, 2, 3, 0.1);
  const Tensor w = random_constant(rs, 2, 3);
  auto res1 = check_gradients([&] { return weighted(hydisc::log(add_scalar(a, 3.0)), w); }, {a});
  CHECK_MESSAGE(res1.ok, "log: ", res1.worst);
  // values in (-0.5, 0.5), clamp bounds at +-2: strictly interior.
  auto res2 = check_gradients([&] { return weighted(clamp(a, -2.0, 2.0), w); }, {a});
  CHECK_MESSAGE(res2.ok, "clamp-interior: ", res2.worst);
  auto res3 = check_gradients([&] { return weighted(clamp_min(add_scalar(a, 5.0), 1.0), w); }, {a});
  CHECK_MESSAGE(res3.ok, "clamp_min-interior: ", res3.worst);
}

TEST_CASE("clamp blocks gradient at and beyond the bounds") {
  Tensor a = Tensor::parameter(1, 3, {-5.0, 2.0, 0.1});
  const Tensor c = clamp(a, -2.0, 2.0);
  sum_all(c).backward();
  REQUIRE(a.has_grad());
  CHECK(a.grad()[0] == 0.0);  // below lower bound
  CHECK(a.grad()[1] == 0.0);  // exactly at upper bound
  CHECK(a.grad()[2] == 1.0);  // interior
}

TEST_CASE("gradients: concat, slice, row_at, mean_rows") {
  RandomStream rs(106);
  Tensor a = random_parameter(rs, 2, 3);
  Tensor b = random_parameter(rs, 3, 3);
  Tensor c = random_parameter(rs, 2, 2);
  const Tensor w53 = random_constant(rs, 5, 3);
  const Tensor w25 = random_constant(rs, 2, 5);
  const Tensor w13 = random_constant(rs, 1, 3);

  auto r1 = check_gradients(
      [&] {
        const Tensor parts[] = {a, b};
        return weighted(concat_rows(parts), w53);
      },
      {a, b});
  CHECK_MESSAGE(r1.ok, "concat_rows: ", r1.worst);
  auto r2 = check_gradients(
      [&] {
        const Tensor parts[] = {a, c};
        return weighted(concat_cols(parts), w25);
      },
      {a, c});
  CHECK_MESSAGE(r2.ok, "concat_cols: ", r2.worst);
  auto r3 = check_gradients([&] { return weighted(slice_rows(b, 1, 3), Tensor::constant(2, 3, 0.7)); },
                            {b});
  CHECK_MESSAGE(r3.ok, "slice_rows: ", r3.worst);
  auto r4 = check_gradients([&] { return weighted(slice_cols(b, 0, 2), Tensor::constant(3, 2, -0.4)); },
                            {b});
  CHECK_MESSAGE(r4.ok, "slice_cols: ", r4.worst);
  auto r5 = check_gradients([&] { return weighted(row_at(b, 2), w13); }, {b});
  CHECK_MESSAGE(r5.ok, "row_at: ", r5.worst);
  auto r6 = check_gradients([&] { return weighted(mean_rows(b), w13); }, {b});
  CHECK_MESSAGE(r6.ok, "mean_rows: ", r6.worst);
}

TEST_CASE("gradients: layer_norm_rows and cosine_similarity") {
  RandomStream rs(107);
  Tensor x = random_parameter(rs, 3, 5);
  Tensor gain = random_parameter(rs, 1, 5, 0.5);
  Tensor bias = random_parameter(rs, 1, 5, 0.5);
  const Tensor w = random_constant(rs, 3, 5);
  auto r1 = check_gradients([&] { return weighted(layer_norm_rows(x, gain, bias), w); },
                            {x, gain, bias});
  CHECK_MESSAGE(r1.ok, "layer_norm_rows: ", r1.worst);

  Tensor u = random_parameter(rs, 1, 6);
  Tensor v = random_parameter(rs, 1, 6);
  auto r2 = check_gradients([&] { return cosine_similarity(u, v); }, {u, v});
  CHECK_MESSAGE(r2.ok, "cosine_similarity: ", r2.worst);
}

TEST_CASE("cosine_similarity of a zero-norm operand is exactly 0 with no gradient") {
  Tensor z = Tensor::parameter(1, 4, {0, 0, 0, 0});
  Tensor v = Tensor::parameter(1, 4, {1, 2, 3, 4});
  const Tensor c = cosine_similarity(z, v);
  CHECK(c.item() == 0.0);
  // The degenerate result is a detached constant: no path back to z or v.
  CHECK_FALSE(c.requires_grad());
  CHECK_THROWS_AS(c.backward(), ContractError);
  CHECK_FALSE(z.has_grad());
  CHECK_FALSE(v.has_grad());
}

TEST_CASE("shape mismatches raise DimensionError naming the operands") {
  const Tensor a = Tensor::zeros(2, 3);
  const Tensor b = Tensor::zeros(3, 3);
  CHECK_THROWS_AS(add(a, b), DimensionError);
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
  CHECK_THROWS_AS(add_rowvec(a, Tensor::zeros(1, 2)), DimensionError);
  CHECK_THROWS_AS(slice_rows(a, 0, 3), DimensionError);
  CHECK_THROWS_AS(slice_cols(a, 2, 1), DimensionError);
}

TEST_CASE("non-finite results raise NumericError") {
  const Tensor neg = Tensor::constant(1, 2, -1.0);
  CHECK_THROWS_AS(hydisc::log(neg), NumericError);
  const Tensor big = Tensor::constant(1, 1, 1e308);
  CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("backward needs a scalar root unless a seed is supplied") {
  Tensor a = Tensor::parameter(2, 2, {1, 2, 3, 4});
  const Tensor y = scale(a, 2.0);
  CHECK_THROWS_AS(y.backward(), ContractError);
  const std::vector<double> seed{1.0, 0.0, 0.0, 1.0};
  y.backward(seed);
  REQUIRE(a.has_grad());
  CHECK(a.grad()[0] == 2.0);
  CHECK(a.grad()[1] == 0.0);
  CHECK(a.grad()[3] == 2.0);
}

TEST_CASE("leaf gradients accumulate across backward calls until zeroed") {
  Tensor a = Tensor::parameter(1, 2, {1.0, 2.0});
  sum_all(a).backward();
  sum_all(a).backward();
  CHECK(a.grad()[0] == 2.0);
  a.zero_grad();
  CHECK(a.grad()[0] == 0.0);
  CHECK(a.grad()[1] == 0.0);
  sum_all(scale(a, 3.0)).backward();
  CHECK(a.grad()[1] == 3.0);
}

TEST_CASE("two roots sharing a subgraph do not cross-contaminate") {
  Tensor a = Tensor::parameter(1, 1, {2.0});
  const Tensor shared = mul(a, a);          // a^2, d/da = 2a = 4
  const Tensor r1 = scale(shared, 3.0);     // d/da = 12
  const Tensor r2 = add_scalar(shared, 1.0);  // d/da = 4
  r1.backward();
  CHECK(a.grad()[0] == doctest::Approx(12.0).epsilon(1e-12));
  a.zero_grad();
  r2.backward();
  CHECK(a.grad()[0] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("detach cuts the graph and NoGradGuard disables recording") {
  Tensor a = Tensor::parameter(1, 2, {1.0, -1.0});
  const Tensor d = scale(a, 5.0).detach();
  CHECK_FALSE(d.requires_grad());
  // A graph made only of detached values cannot seed a backward pass.
  CHECK_THROWS_AS(sum_all(mul(d, d)).backward(), ContractError);
  CHECK_FALSE(a.has_grad());
  // Mixed with a live path, the detached branch contributes nothing.
  sum_all(add(mul(d, d), a)).backward();
  REQUIRE(a.has_grad());
  CHECK(a.grad()[0] == 1.0);
  CHECK(a.grad()[1] == 1.0);
  a.zero_grad();
  {
    NoGradGuard guard;
    const Tensor y = scale(a, 2.0);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(scale(a, 2.0).requires_grad());
}

TEST_CASE("in-place leaf mutation feeds later forwards (optimizer contract)") {
  Tensor a = Tensor::parameter(1, 1, {1.0});
  a.leaf_values()[0] = 6.0;
  CHECK(scale(a, 2.0).item() == 12.0);
}
