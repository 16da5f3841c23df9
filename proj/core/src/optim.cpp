#include "hydisc/optim.hpp"

#include <cmath>

namespace hydisc {

void ParamSet::add(std::string name, Tensor t) {
  if (!t.defined()) throw ContractError("ParamSet::add: undefined tensor '" + name + "'");
  if (!t.is_leaf()) throw ContractError("ParamSet::add: '" + name + "' is not a leaf tensor");
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(t));
}

void ParamSet::extend(const ParamSet& other, const std::string& prefix) {
  for (std::size_t i = 0; i < other.count(); ++i) {
    add(prefix + other.name(i), other.tensor(i));
  }
}

std::uint64_t ParamSet::total_elements() const {
  std::uint64_t n = 0;
  for (const Tensor& t : tensors_) n += t.size();
  return n;
}

void ParamSet::zero_grads() {
  for (Tensor& t : tensors_) t.zero_grad();
}

namespace {

void adam_update(std::span<double> values, std::span<const double> grads, AdamState& state,
                 std::vector<double>& m, std::vector<double>& v) {
  if (m.empty()) m.assign(values.size(), 0.0);
  if (v.empty()) v.assign(values.size(), 0.0);
  if (m.size() != values.size() || grads.size() != values.size()) {
    throw DimensionError("adam_step: state/gradient size mismatch: values " +
                         std::to_string(values.size()) + ", grads " + std::to_string(grads.size()) +
                         ", moments " + std::to_string(m.size()));
  }
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double g = grads[i];
    m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
    v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    values[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

}  // namespace

void adam_step(ParamSet& params, AdamState& state) {
  if (state.m.size() < params.count()) state.m.resize(params.count());
  if (state.v.size() < params.count()) state.v.resize(params.count());
  ++state.step_count;
  // Zero gradient (never accumulated) leaves parameters untouched only
  // while the moments are zero as well, which holds per-slot by induction.
  std::vector<double> zero;
  for (std::size_t i = 0; i < params.count(); ++i) {
    Tensor& t = params.tensor(i);
    std::span<const double> g;
    if (t.has_grad()) {
      g = t.grad();
    } else {
      if (zero.size() < t.size()) zero.assign(t.size(), 0.0);
      g = std::span<const double>(zero.data(), t.size());
    }
    adam_update(t.leaf_values(), g, state, state.m[i], state.v[i]);
  }
}

void adam_step(std::span<double> values, std::span<const double> grads, AdamState& state,
               std::size_t slot) {
  if (state.m.size() <= slot) state.m.resize(slot + 1);
  if (state.v.size() <= slot) state.v.resize(slot + 1);
  ++state.step_count;
  adam_update(values, grads, state, state.m[slot], state.v[slot]);
}

}  // namespace hydisc
