#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hydisc/tensor.hpp"

namespace hydisc {

// Named, ordered collection of parameter leaves. Entries alias the model's
// tensors, so optimizer steps through a ParamSet mutate the model in place.
class ParamSet {
 public:
  void add(std::string name, Tensor t);
  void extend(const ParamSet& other, const std::string& prefix);

  std::size_t count() const { return names_.size(); }
  std::uint64_t total_elements() const;
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }

  void zero_grads();

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

// Adam with bias correction. Moments are keyed by position in the ParamSet;
// the state is sized lazily on the first step and is serializable so
// checkpointed runs resume bit-identically.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step_count = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// Applies one update from the gradients currently accumulated on the leaves.
// Tensors without an accumulated gradient are treated as zero-gradient.
void adam_step(ParamSet& params, AdamState& state);

// Single-tensor form used by the update rule tests.
void adam_step(std::span<double> values, std::span<const double> grads, AdamState& state,
               std::size_t slot = 0);

}  // namespace hydisc
