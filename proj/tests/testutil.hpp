#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hydisc/rng.hpp"
#include "hydisc/tensor.hpp"

namespace testutil {

// Result of a finite-difference sweep: worst relative error and where it was.
struct GradCheckResult {
  bool ok = true;
  double max_rel_err = 0.0;
  int checked = 0;
  std::string worst;
};

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central-difference check of d f / d p for every element of every parameter.
// `f` rebuilds the graph from the current leaf values and returns a 1x1 loss.
inline GradCheckResult check_gradients(const std::function<hydisc::Tensor()>& f,
                                       std::vector<hydisc::Tensor> params, double h = 1e-5,
                                       double tol = 1e-4) {
  using hydisc::NoGradGuard;
  using hydisc::Tensor;
  for (Tensor& p : params) p.zero_grad();
  const Tensor out = f();
  out.backward();

  std::vector<std::vector<double>> analytic;
  for (const Tensor& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.size(), 0.0);
    }
  }

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    std::span<double> leaf = params[pi].leaf_values();
    for (std::size_t i = 0; i < leaf.size(); ++i) {
      const double orig = leaf[i];
      double fp = 0.0, fm = 0.0;
      {
        NoGradGuard guard;
        leaf[i] = orig + h;
        fp = f().item();
        leaf[i] = orig - h;
        fm = f().item();
      }
      leaf[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double err = rel_err(analytic[pi][i], fd);
      ++result.checked;
      if (err > result.max_rel_err) {
        result.max_rel_err = err;
        result.worst = "param " + std::to_string(pi) + "[" + std::to_string(i) +
                       "]: analytic=" + std::to_string(analytic[pi][i]) +
                       " fd=" + std::to_string(fd);
      }
      if (err > tol) result.ok = false;
    }
  }
  return result;
}

inline hydisc::Tensor random_parameter(hydisc::RandomStream& rs, int rows, int cols,
                                       double scale = 1.0) {
  std::vector<double> data(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  for (double& x : data) x = rs.next_gaussian() * scale;
  return hydisc::Tensor::parameter(rows, cols, std::move(data));
}

inline hydisc::Tensor random_constant(hydisc::RandomStream& rs, int rows, int cols,
                                      double scale = 1.0) {
  std::vector<double> data(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  for (double& x : data) x = rs.next_gaussian() * scale;
  return hydisc::Tensor::from_rows(rows, cols, std::move(data));
}

}  // namespace testutil
