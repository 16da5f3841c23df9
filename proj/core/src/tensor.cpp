#include "hydisc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace hydisc {

using GradSink = std::function<std::vector<double>&(TensorNode*)>;

struct TensorNode {
  int rows = 0, cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // populated for leaves only
  bool requires_grad = false;
  bool leaf = true;
  std::vector<NodeHandle> inputs;
  std::function<void(std::span<const double>, const GradSink&)> backward;
};

namespace {

thread_local bool g_grad_mode = true;

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor operand");
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": produced a non-finite value");
    }
  }
}

std::string shape_of(int r, int c) {
  std::ostringstream os;
  os << "(" << r << "x" << c << ")";
  return os.str();
}

NodeHandle make_leaf(int rows, int cols, std::vector<double> value, bool requires_grad) {
  if (rows <= 0 || cols <= 0) {
    throw DimensionError("tensor: dimensions must be positive, got " + shape_of(rows, cols));
  }
  if (value.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
    throw DimensionError("tensor: data length " + std::to_string(value.size()) +
                         " does not match shape " + shape_of(rows, cols));
  }
  check_finite(value, "tensor");
  auto n = std::make_shared<TensorNode>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->leaf = true;
  return n;
}

using BackFn = std::function<void(std::span<const double>, const GradSink&)>;

Tensor make_op(int rows, int cols, std::vector<double> value, std::initializer_list<Tensor> ins,
               BackFn fn, const char* op) {
  check_finite(value, op);
  auto n = std::make_shared<TensorNode>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  bool any_grad = false;
  for (const Tensor& t : ins) {
    if (t.defined() && t.node()->requires_grad) {
      any_grad = true;
      break;
    }
  }
  if (g_grad_mode && any_grad) {
    n->leaf = false;
    n->requires_grad = true;
    for (const Tensor& t : ins) n->inputs.push_back(t.node());
    n->backward = std::move(fn);
  }
  return Tensor(n);
}

Tensor make_op(int rows, int cols, std::vector<double> value, std::span<const Tensor> ins,
               BackFn fn, const char* op) {
  check_finite(value, op);
  auto n = std::make_shared<TensorNode>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  bool any_grad = false;
  for (const Tensor& t : ins) {
    if (t.defined() && t.node()->requires_grad) {
      any_grad = true;
      break;
    }
  }
  if (g_grad_mode && any_grad) {
    n->leaf = false;
    n->requires_grad = true;
    for (const Tensor& t : ins) n->inputs.push_back(t.node());
    n->backward = std::move(fn);
  }
  return Tensor(n);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shapes disagree: " + a.shape_str() + " vs " +
                         b.shape_str());
  }
}

}  // namespace

// ---- Tensor ----------------------------------------------------------

Tensor Tensor::zeros(int rows, int cols) {
  return Tensor(make_leaf(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0),
                          false));
}

Tensor Tensor::constant(int rows, int cols, double fill) {
  return Tensor(make_leaf(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, fill),
                          false));
}

Tensor Tensor::from_rows(int rows, int cols, std::vector<double> data) {
  return Tensor(make_leaf(rows, cols, std::move(data), false));
}

Tensor Tensor::scalar(double v) { return Tensor(make_leaf(1, 1, {v}, false)); }

Tensor Tensor::row(std::vector<double> data) {
  const int n = static_cast<int>(data.size());
  return Tensor(make_leaf(1, n, std::move(data), false));
}

Tensor Tensor::parameter(int rows, int cols, std::vector<double> data) {
  return Tensor(make_leaf(rows, cols, std::move(data), true));
}

int Tensor::rows() const {
  require_defined(*this, "rows");
  return node_->rows;
}

int Tensor::cols() const {
  require_defined(*this, "cols");
  return node_->cols;
}

std::size_t Tensor::size() const {
  require_defined(*this, "size");
  return node_->value.size();
}

std::string Tensor::shape_str() const {
  if (!defined()) return "(undefined)";
  return shape_of(node_->rows, node_->cols);
}

double Tensor::at(int r, int c) const {
  require_defined(*this, "at");
  if (r < 0 || r >= node_->rows || c < 0 || c >= node_->cols) {
    throw DimensionError("at: index (" + std::to_string(r) + "," + std::to_string(c) +
                         ") out of range for " + shape_str());
  }
  return node_->value[static_cast<std::size_t>(r) * node_->cols + c];
}

double Tensor::item() const {
  require_defined(*this, "item");
  if (size() != 1) throw ContractError("item: tensor is not scalar, shape " + shape_str());
  return node_->value[0];
}

std::span<const double> Tensor::values() const {
  require_defined(*this, "values");
  return node_->value;
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

bool Tensor::is_leaf() const { return defined() && node_->leaf; }

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  if (node_->grad.empty()) {
    throw ContractError("grad: no gradient has been accumulated on this tensor");
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  require_defined(*this, "zero_grad");
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::span<double> Tensor::leaf_values() {
  require_defined(*this, "leaf_values");
  if (!node_->leaf) throw ContractError("leaf_values: mutation is only allowed on leaf tensors");
  return node_->value;
}

std::span<double> Tensor::leaf_grad() {
  require_defined(*this, "leaf_grad");
  if (!node_->leaf) throw ContractError("leaf_grad: only leaf tensors accumulate gradients");
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return Tensor(make_leaf(node_->rows, node_->cols, node_->value, false));
}

void Tensor::backward() const {
  require_defined(*this, "backward");
  if (size() != 1) {
    throw ContractError("backward: root must be scalar (got " + shape_str() +
                        "); pass an explicit seed for non-scalar roots");
  }
  const double one = 1.0;
  backward(std::span<const double>(&one, 1));
}

void Tensor::backward(std::span<const double> seed) const {
  require_defined(*this, "backward");
  if (!node_->requires_grad) {
    throw ContractError("backward: root is not attached to a recorded graph");
  }
  if (seed.size() != node_->value.size()) {
    throw DimensionError("backward: seed length " + std::to_string(seed.size()) +
                         " does not match root size " + std::to_string(node_->value.size()));
  }

  // Topological order via iterative post-order DFS over grad-requiring nodes.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* n;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->inputs.size()) {
      TensorNode* in = f.n->inputs[f.next++].get();
      if (in->requires_grad && !visited.count(in)) {
        visited.insert(in);
        stack.push_back({in, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  // Per-call gradient buffers; leaves flush into persistent storage at the
  // end. This keeps repeated backward() calls independent.
  std::unordered_map<TensorNode*, std::vector<double>> acc;
  acc.reserve(order.size() * 2);
  acc[node_.get()].assign(seed.begin(), seed.end());
  GradSink sink = [&acc](TensorNode* n) -> std::vector<double>& {
    auto& buf = acc[n];
    if (buf.empty()) buf.assign(n->value.size(), 0.0);
    return buf;
  };

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    auto found = acc.find(n);
    if (found == acc.end()) continue;
    if (n->backward) n->backward(found->second, sink);
  }

  for (TensorNode* n : order) {
    if (!n->leaf || !n->requires_grad) continue;
    auto found = acc.find(n);
    if (found == acc.end()) continue;
    if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
    const std::vector<double>& g = found->second;
    for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += g[i];
  }
}

NoGradGuard::NoGradGuard() : prev_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = prev_; }

bool grad_mode_enabled() { return g_grad_mode; }

// ---- ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree: " + a.shape_str() + " vs " +
                         b.shape_str());
  }
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double av = A[static_cast<std::size_t>(i) * k + p];
      double* orow = out.data() + static_cast<std::size_t>(i) * n;
      const double* brow = B + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  NodeHandle an = a.node(), bn = b.node();
  return make_op(
      m, n, std::move(out), {a, b},
      [an, bn, m, k, n](std::span<const double> g, const GradSink& sink) {
        if (an->requires_grad) {
          auto& ga = sink(an.get());
          const double* B = bn->value.data();
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
              const double gv = g[static_cast<std::size_t>(i) * n + j];
              const double* brow = B + static_cast<std::size_t>(0) * n + j;
              for (int p = 0; p < k; ++p) {
                ga[static_cast<std::size_t>(i) * k + p] += gv * brow[static_cast<std::size_t>(p) * n];
              }
            }
          }
        }
        if (bn->requires_grad) {
          auto& gb = sink(bn.get());
          const double* A = an->value.data();
          for (int i = 0; i < m; ++i) {
            for (int p = 0; p < k; ++p) {
              const double av = A[static_cast<std::size_t>(i) * k + p];
              const double* grow = g.data() + static_cast<std::size_t>(i) * n;
              double* gbrow = gb.data() + static_cast<std::size_t>(p) * n;
              for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
            }
          }
        }
      },
      "matmul");
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  const double* A = a.values().data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(j) * m + i] = A[static_cast<std::size_t>(i) * n + j];
    }
  }
  NodeHandle an = a.node();
  return make_op(
      n, m, std::move(out), {a},
      [an, m, n](std::span<const double> g, const GradSink& sink) {
        if (!an->requires_grad) return;
        auto& ga = sink(an.get());
        for (int j = 0; j < n; ++j) {
          for (int i = 0; i < m; ++i) {
            ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
          }
        }
      },
      "transpose");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  NodeHandle an = a.node(), bn = b.node();
  return make_op(
      a.rows(), a.cols(), std::move(out), {a, b},
      [an, bn](std::span<const double> g, const GradSink& sink) {
        if (an->requires_grad) {
          auto& ga = sink(an.get());
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bn->requires_grad) {
          auto& gb = sink(bn.get());
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
  NodeHandle an = a.node(), bn = b.node();
  return make_op(
      a.rows(), a.cols(), std::move(out), {a, b},
      [an, bn](std::span<const double> g, const GradSink& sink) {
        if (an->requires_grad) {
          auto& ga = sink(an.get());
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bn->requires_grad) {
          auto& gb = sink(bn.get());
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  NodeHandle an = a.node(), bn = b.node();
  return make_op(
      a.rows(), a.cols(), std::move(out), {a, b},
      [an, bn](std::span<const double> g, const GradSink& sink) {
        if (an->requires_grad) {
          auto& ga = sink(an.get());
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
        }
        if (bn->requires_grad) {
          auto& gb = sink(bn.get());
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
        }
      },
      "mul");
}

Tensor scale(const Tensor& a, double c) {
  require_defined(a, "scale");
  std::vector<double> out(a.size());
  const double* A = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * c;
  NodeHandle an = a.node();
  return make_op(
      a.rows(), a.cols(), std::move(out), {a},
      [an, c](std::span<const double> g, const GradSink& sink) {
        if (!an->requires_grad) return;
        auto& ga = sink(an.get());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
      },
      "scale");
}

Tensor add_scalar(const Tensor& a, double c) {
  require_defined(a, "add_scalar");
  std::vector<double> out(a.size());
  const double* A = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + c;
  NodeHandle an = a.node();
  return make_op(
      a.rows(), a.cols(), std::move(out), {a},
      [an](std::span<const double> g, const GradSink& sink) {
        if (!an->requires_grad) return;
        auto& ga = sink(an.get());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      },
      "add_scalar");
}

Tensor add_rowvec(const Tensor& a, const Tensor& r) {
  require_defined(a, "add_rowvec");
  require_defined(r, "add_rowvec");
  if (r.rows() != 1 || r.cols() != a.cols()) {
    throw DimensionError("add_rowvec: row " + r.shape_str() + " does not broadcast onto " +
                         a.shape_str());
  }
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  const double* A = a.values().data();
  const double* R = r.values().data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(i) * n + j] = A[static_cast<std::size_t>(i) * n + j] + R[j];
    }
  }
  NodeHandle an = a.node(), rn = r.node();
  return make_op(
      m, n, std::move(out), {a, r},
      [an, rn, m, n](std::span<const double> g, const GradSink& sink) {
        if (an->requires_grad) {
          auto& ga = sink(an.get());
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (rn->requires_grad) {
          auto& gr = sink(rn.get());
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) gr[j] += g[static_cast<std::size_t>(i) * n + j];
          }
        }
      },
      "add_rowvec");
}

Tensor sum_all(const Tensor& a) {
  require_defined(a, "sum_all");
  double s = 0.0;
  for (double v : a.values()) s += v;
  NodeHandle an = a.node();
  return make_op(
      1, 1, {s}, {a},
      [an](std::span<const double> g, const GradSink& sink) {
        if (!an->requires_grad) return;
        auto& ga = sink(an.get());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
      },
      "sum_all");
}

Tensor mean_all(const Tensor& a) {
  require_defined(a, "mean_all");
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  NodeHandle an = a.node();
  return make_op(
      1, 1, {s * inv}, {a},
      [an, inv](std::span<const double> g, const GradSink& sink) {
        if (!an->requires_grad) return;
        auto& ga = sink(an.get());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * inv;
      },
      "mean_all");
}

Tensor softmax_rows(const Tensor& a) {
  require_defined(a, "softmax_rows");
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  const double* A = a.values().data();
  for (int i = 0; i < m; ++i) {
    const double* x = A + static_cast<std::size_t>(i) * n;
    double* y = out.data() + static_cast<std::size_t>(i) * n;
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    const double inv = 1.0 / s;
    for (int j = 0; j < n; ++j) y[j] *= inv;
  }
  std::vector<double> sm = out;  // captured for the backward pass
  NodeHandle an = a.node();
  return make_op(
      m, n, std::move(out), {a},
      [an, sm = std::move(sm), m, n](std::span<const double> g, const GradSink& sink) {
        if (!an->requires_grad) return;
        auto& ga = sink(an.get());
        for (int i = 0; i < m; ++i) {
          const double* s = sm.data() + static_cast<std::size_t>(i) * n;
          const double* gr = g.data() + static_cast<std::size_t>(i) * n;
          double dot = 0.0;
          for (int j = 0; j < n; ++j) dot += gr[j] * s[j];
          double* garow = ga.data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) garow[j] += s[j] * (gr[j] - dot);
        }
      },
      "softmax_rows");
}

Tensor log(const Tensor& a) {
  require_defined(a, "log");
  std::vector<double> out(a.size());
  const double* A = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (A[i] <= 0.0) throw NumericError("log: non-positive input " + std::to_string(A[i]));
    out[i] = std::log(A[i]);
  }
  NodeHandle an = a.node();
  return make_op(
      a.rows(), a.cols(), std::move(out), {a},
      [an](std::span<const double> g, const GradSink& sink) {
        if (!an->requires_grad) return;
        auto& ga = sink(an.get());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / an->value[i];
      },
      "log");
}

Tensor exp(const Tensor& a) {
  require_defined(a, "exp");
  std::vector<double> out(a.size());
  const double* A = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(A[i]);
  std::vector<double> ex = out;
  NodeHandle an = a.node();
  return make_op(
      a.rows(), a.cols(), std::move(out), {a},
      [an, ex = std::move(ex)](std::span<const double> g, const GradSink& sink) {
        if (!an->requires_grad) return;
        auto& ga = sink(an.get());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ex[i];
      },
      "exp");
}

Tensor sigmoid(const Tensor& a) {
  require_defined(a, "sigmoid");
  std::vector<double> out(a.size());
  const double* A = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-A[i]));
  std::vector<double> s = out;
  NodeHandle an = a.node();
  return make_op(
      a.rows(), a.cols(), std::move(out), {a},
      [an, s = std::move(s)](std::span<const double> g, const GradSink& sink) {
        if (!an->requires_grad) return;
        auto& ga = sink(an.get());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s[i] * (1.0 - s[i]);
      },
      "sigmoid");
}

Tensor gelu(const Tensor& a) {
  require_defined(a, "gelu");
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  std::vector<double> out(a.size());
  const double* A = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * A[i] * (1.0 + std::erf(A[i] * kInvSqrt2));
  }
  NodeHandle an = a.node();
  return make_op(
      a.rows(), a.cols(), std::move(out), {a},
      [an](std::span<const double> g, const GradSink& sink) {
        if (!an->requires_grad) return;
        auto& ga = sink(an.get());
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double x = an->value[i];
          const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
          ga[i] += g[i] * (phi + x * pdf);
        }
      },
      "gelu");
}

Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(a, "layer_norm_rows");
  require_defined(gain, "layer_norm_rows");
  require_defined(bias, "layer_norm_rows");
  const int m = a.rows(), n = a.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw DimensionError("layer_norm_rows: gain " + gain.shape_str() + " / bias " +
                         bias.shape_str() + " do not match input " + a.shape_str());
  }
  std::vector<double> out(a.size());
  std::vector<double> xhat(a.size());
  std::vector<double> inv_std(m);
  const double* A = a.values().data();
  const double* G = gain.values().data();
  const double* B = bias.values().data();
  for (int i = 0; i < m; ++i) {
    const double* x = A + static_cast<std::size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += x[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int j = 0; j < n; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * n + j;
      xhat[idx] = (x[j] - mu) * is;
      out[idx] = G[j] * xhat[idx] + B[j];
    }
  }
  NodeHandle an = a.node(), gn = gain.node(), bn = bias.node();
  return make_op(
      m, n, std::move(out), {a, gain, bias},
      [an, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), m,
       n](std::span<const double> g, const GradSink& sink) {
        const double* G = gn->value.data();
        if (an->requires_grad) {
          auto& ga = sink(an.get());
          for (int i = 0; i < m; ++i) {
            const std::size_t base = static_cast<std::size_t>(i) * n;
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int j = 0; j < n; ++j) {
              const double dxh = g[base + j] * G[j];
              sum_dxhat += dxh;
              sum_dxhat_xhat += dxh * xhat[base + j];
            }
            const double is = inv_std[i];
            for (int j = 0; j < n; ++j) {
              const double dxh = g[base + j] * G[j];
              ga[base + j] +=
                  is * (dxh - sum_dxhat / n - xhat[base + j] * sum_dxhat_xhat / n);
            }
          }
        }
        if (gn->requires_grad) {
          auto& gg = sink(gn.get());
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
              gg[j] += g[static_cast<std::size_t>(i) * n + j] * xhat[static_cast<std::size_t>(i) * n + j];
            }
          }
        }
        if (bn->requires_grad) {
          auto& gb = sink(bn.get());
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) gb[j] += g[static_cast<std::size_t>(i) * n + j];
          }
        }
      },
      "layer_norm_rows");
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  require_defined(a, "clamp");
  if (!(lo < hi)) throw ContractError("clamp: lo must be below hi");
  std::vector<double> out(a.size());
  const double* A = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(A[i], lo), hi);
  NodeHandle an = a.node();
  return make_op(
      a.rows(), a.cols(), std::move(out), {a},
      [an, lo, hi](std::span<const double> g, const GradSink& sink) {
        if (!an->requires_grad) return;
        auto& ga = sink(an.get());
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double x = an->value[i];
          if (x > lo && x < hi) ga[i] += g[i];
        }
      },
      "clamp");
}

Tensor clamp_min(const Tensor& a, double lo) {
  require_defined(a, "clamp_min");
  std::vector<double> out(a.size());
  const double* A = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(A[i], lo);
  NodeHandle an = a.node();
  return make_op(
      a.rows(), a.cols(), std::move(out), {a},
      [an, lo](std::span<const double> g, const GradSink& sink) {
        if (!an->requires_grad) return;
        auto& ga = sink(an.get());
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (an->value[i] > lo) ga[i] += g[i];
        }
      },
      "clamp_min");
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: empty input list");
  const int n = parts[0].cols();
  int total = 0;
  for (const Tensor& p : parts) {
    require_defined(p, "concat_rows");
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column mismatch: " + parts[0].shape_str() + " vs " +
                           p.shape_str());
    }
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(total) * n);
  for (const Tensor& p : parts) {
    auto v = p.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  std::vector<NodeHandle> handles;
  std::vector<int> row_counts;
  for (const Tensor& p : parts) {
    handles.push_back(p.node());
    row_counts.push_back(p.rows());
  }
  return make_op(
      total, n, std::move(out), parts,
      [handles = std::move(handles), row_counts = std::move(row_counts),
       n](std::span<const double> g, const GradSink& sink) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < handles.size(); ++p) {
          const std::size_t len = static_cast<std::size_t>(row_counts[p]) * n;
          if (handles[p]->requires_grad) {
            auto& gp = sink(handles[p].get());
            for (std::size_t i = 0; i < len; ++i) gp[i] += g[offset + i];
          }
          offset += len;
        }
      },
      "concat_rows");
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: empty input list");
  const int m = parts[0].rows();
  int total = 0;
  for (const Tensor& p : parts) {
    require_defined(p, "concat_cols");
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch: " + parts[0].shape_str() + " vs " +
                           p.shape_str());
    }
    total += p.cols();
  }
  std::vector<double> out(static_cast<std::size_t>(m) * total);
  int col0 = 0;
  for (const Tensor& p : parts) {
    const int pc = p.cols();
    const double* P = p.values().data();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < pc; ++j) {
        out[static_cast<std::size_t>(i) * total + col0 + j] = P[static_cast<std::size_t>(i) * pc + j];
      }
    }
    col0 += pc;
  }
  std::vector<NodeHandle> handles;
  std::vector<int> col_counts;
  for (const Tensor& p : parts) {
    handles.push_back(p.node());
    col_counts.push_back(p.cols());
  }
  return make_op(
      m, total, std::move(out), parts,
      [handles = std::move(handles), col_counts = std::move(col_counts), m,
       total](std::span<const double> g, const GradSink& sink) {
        int col0 = 0;
        for (std::size_t p = 0; p < handles.size(); ++p) {
          const int pc = col_counts[p];
          if (handles[p]->requires_grad) {
            auto& gp = sink(handles[p].get());
            for (int i = 0; i < m; ++i) {
              for (int j = 0; j < pc; ++j) {
                gp[static_cast<std::size_t>(i) * pc + j] +=
                    g[static_cast<std::size_t>(i) * total + col0 + j];
              }
            }
          }
          col0 += pc;
        }
      },
      "concat_cols");
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  require_defined(a, "slice_rows");
  if (r0 < 0 || r1 > a.rows() || r0 >= r1) {
    throw DimensionError("slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                         ") invalid for " + a.shape_str());
  }
  const int n = a.cols();
  const int m = r1 - r0;
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  const double* A = a.values().data();
  std::copy(A + static_cast<std::size_t>(r0) * n, A + static_cast<std::size_t>(r1) * n, out.begin());
  NodeHandle an = a.node();
  return make_op(
      m, n, std::move(out), {a},
      [an, r0, m, n](std::span<const double> g, const GradSink& sink) {
        if (!an->requires_grad) return;
        auto& ga = sink(an.get());
        for (std::size_t i = 0; i < static_cast<std::size_t>(m) * n; ++i) {
          ga[static_cast<std::size_t>(r0) * n + i] += g[i];
        }
      },
      "slice_rows");
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  require_defined(a, "slice_cols");
  if (c0 < 0 || c1 > a.cols() || c0 >= c1) {
    throw DimensionError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                         ") invalid for " + a.shape_str());
  }
  const int m = a.rows(), n = a.cols(), w = c1 - c0;
  std::vector<double> out(static_cast<std::size_t>(m) * w);
  const double* A = a.values().data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < w; ++j) {
      out[static_cast<std::size_t>(i) * w + j] = A[static_cast<std::size_t>(i) * n + c0 + j];
    }
  }
  NodeHandle an = a.node();
  return make_op(
      m, w, std::move(out), {a},
      [an, c0, m, n, w](std::span<const double> g, const GradSink& sink) {
        if (!an->requires_grad) return;
        auto& ga = sink(an.get());
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < w; ++j) {
            ga[static_cast<std::size_t>(i) * n + c0 + j] += g[static_cast<std::size_t>(i) * w + j];
          }
        }
      },
      "slice_cols");
}

Tensor row_at(const Tensor& a, int r) { return slice_rows(a, r, r + 1); }

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  require_defined(a, "cosine_similarity");
  require_defined(b, "cosine_similarity");
  check_same_shape(a, b, "cosine_similarity");
  const double* A = a.values().data();
  const double* B = b.values().data();
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += A[i] * B[i];
    na2 += A[i] * A[i];
    nb2 += B[i] * B[i];
  }
  // A zero-norm operand has no direction; the similarity is defined as 0 and
  // no gradient flows.
  if (na2 < 1e-24 || nb2 < 1e-24) return Tensor::scalar(0.0);
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const double s = dot / (na * nb);
  NodeHandle an = a.node(), bn = b.node();
  return make_op(
      1, 1, {s}, {a, b},
      [an, bn, na, nb, s](std::span<const double> g, const GradSink& sink) {
        const double g0 = g[0];
        if (an->requires_grad) {
          auto& ga = sink(an.get());
          for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += g0 * (bn->value[i] / (na * nb) - s * an->value[i] / (na * na));
          }
        }
        if (bn->requires_grad) {
          auto& gb = sink(bn.get());
          for (std::size_t i = 0; i < gb.size(); ++i) {
            gb[i] += g0 * (an->value[i] / (na * nb) - s * bn->value[i] / (nb * nb));
          }
        }
      },
      "cosine_similarity");
}

Tensor mean_rows(const Tensor& a) {
  require_defined(a, "mean_rows");
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(n, 0.0);
  const double* A = a.values().data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[j] += A[static_cast<std::size_t>(i) * n + j];
  }
  const double inv = 1.0 / m;
  for (int j = 0; j < n; ++j) out[j] *= inv;
  NodeHandle an = a.node();
  return make_op(
      1, n, std::move(out), {a},
      [an, m, n, inv](std::span<const double> g, const GradSink& sink) {
        if (!an->requires_grad) return;
        auto& ga = sink(an.get());
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] += g[j] * inv;
        }
      },
      "mean_rows");
}

}  // namespace hydisc
