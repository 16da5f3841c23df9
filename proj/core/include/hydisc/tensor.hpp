#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hydisc/errors.hpp"

namespace hydisc {

struct TensorNode;
using NodeHandle = std::shared_ptr<TensorNode>;

// Dense row-major matrix of 64-bit floats with reverse-mode autodiff.
// Scalars are 1x1, vectors are 1xN rows. Copies are shallow (shared node),
// matching the aliasing behaviour of the ops below.
//
// Recording: an op records a backward closure iff grad mode is on (default)
// and at least one input requires grad. Gradients accumulate persistently on
// leaves only; intermediate gradients live in per-backward scratch buffers,
// so repeated backward() calls from different roots never cross-contaminate.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(int rows, int cols);
  static Tensor constant(int rows, int cols, double fill);
  static Tensor from_rows(int rows, int cols, std::vector<double> data);
  static Tensor scalar(double v);
  static Tensor row(std::vector<double> data);
  // Trainable leaf.
  static Tensor parameter(int rows, int cols, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  int rows() const;
  int cols() const;
  std::size_t size() const;
  std::pair<int, int> shape() const { return {rows(), cols()}; }
  std::string shape_str() const;

  double at(int r, int c) const;
  double item() const;  // 1x1 only
  std::span<const double> values() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;  // throws unless a grad was accumulated
  void zero_grad();

  // In-place access to a leaf's storage. Only optimizer steps and test
  // harnesses may mutate values; graph intermediates are immutable.
  std::span<double> leaf_values();
  std::span<double> leaf_grad();  // allocates zeros on first use

  // Value copy detached from any graph; never trainable.
  Tensor detach() const;

  // Reverse-mode sweep. The no-argument form requires a scalar root.
  void backward() const;
  void backward(std::span<const double> seed) const;

  const NodeHandle& node() const { return node_; }
  explicit Tensor(NodeHandle n) : node_(std::move(n)) {}

 private:
  NodeHandle node_;
};

// RAII guard that disables graph recording (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_mode_enabled();

// ---- ops -------------------------------------------------------------
// Every op validates shapes (DimensionError names both operands) and checks
// the result for NaN/Inf (NumericError).

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
// Broadcasts a 1xN row onto every row of a.
Tensor add_rowvec(const Tensor& a, const Tensor& row);

Tensor sum_all(const Tensor& a);   // 1x1
Tensor mean_all(const Tensor& a);  // 1x1

Tensor softmax_rows(const Tensor& a);
Tensor log(const Tensor& a);  // domain (0, inf)
Tensor exp(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form
// Per-row normalization followed by elementwise gain and bias (1xN each).
Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
// Gradient is passed through strictly inside (lo, hi) and zero at or beyond
// the bounds.
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor clamp_min(const Tensor& a, double lo);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, int r0, int r1);  // [r0, r1)
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor row_at(const Tensor& a, int r);

// Cosine similarity of two equally-shaped tensors viewed as flat vectors.
// A zero-norm operand yields exactly 0 with zero gradient.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

// Column means of a as a 1xN row (used for <CLS> pooling).
Tensor mean_rows(const Tensor& a);

}  // namespace hydisc
