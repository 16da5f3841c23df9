#include "hydisc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hydisc/errors.hpp"

namespace hydisc {

namespace {

int class7(double y) {
  return static_cast<int>(std::round(std::clamp(y, -3.0, 3.0)));
}

double f1_from_counts(int tp, int fp, int fn) {
  const double denom = 2.0 * tp + fp + fn;
  if (denom == 0.0) return 0.0;
  return 2.0 * tp / denom;
}

}  // namespace

MetricsRecord compute_metrics(std::span<const double> y_true, std::span<const double> y_hat) {
  if (y_true.size() != y_hat.size()) {
    throw DimensionError("compute_metrics: " + std::to_string(y_true.size()) + " targets vs " +
                         std::to_string(y_hat.size()) + " predictions");
  }
  if (y_true.empty()) throw ContractError("compute_metrics: no samples");

  MetricsRecord r;
  r.n = static_cast<int>(y_true.size());

  int correct_nonneg = 0, tp_nn = 0, fp_nn = 0, fn_nn = 0;
  int correct_strict = 0, tp_st = 0, fp_st = 0, fn_st = 0;
  int correct7 = 0;
  double abs_sum = 0.0;
  double mean_t = 0.0, mean_h = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double t = y_true[i];
    const double h = y_hat[i];
    const bool t_neg = t < 0.0;
    const bool h_neg = h < 0.0;

    if (t_neg == h_neg) ++correct_nonneg;
    if (t_neg && h_neg) ++tp_nn;
    if (!t_neg && h_neg) ++fp_nn;
    if (t_neg && !h_neg) ++fn_nn;

    if (t != 0.0) {
      ++r.n_strict;
      if (t_neg == h_neg) ++correct_strict;
      if (t_neg && h_neg) ++tp_st;
      if (!t_neg && h_neg) ++fp_st;
      if (t_neg && !h_neg) ++fn_st;
    }

    if (class7(t) == class7(h)) ++correct7;
    abs_sum += std::abs(h - t);
    mean_t += t;
    mean_h += h;
  }
  const double n = static_cast<double>(r.n);
  mean_t /= n;
  mean_h /= n;

  r.acc2_nonneg = correct_nonneg / n;
  r.f1_nonneg = f1_from_counts(tp_nn, fp_nn, fn_nn);
  if (r.n_strict > 0) {
    r.acc2_strict = correct_strict / static_cast<double>(r.n_strict);
    r.f1_strict = f1_from_counts(tp_st, fp_st, fn_st);
  }
  r.acc7 = correct7 / n;
  r.mae = abs_sum / n;

  double cov = 0.0, var_t = 0.0, var_h = 0.0;
  // Detect constant series by value equality, not by variance: the mean of a
  // constant series need not be exactly representable, which leaves a tiny
  // nonzero variance and would turn the correlation into rounding noise.
  bool const_t = true, const_h = true;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const_t = const_t && y_true[i] == y_true[0];
    const_h = const_h && y_hat[i] == y_hat[0];
    const double dt = y_true[i] - mean_t;
    const double dh = y_hat[i] - mean_h;
    cov += dt * dh;
    var_t += dt * dt;
    var_h += dh * dh;
  }
  if (const_t || const_h || var_t <= 0.0 || var_h <= 0.0) {
    r.corr = 0.0;
    r.corr_degenerate = true;
  } else {
    r.corr = cov / std::sqrt(var_t * var_h);
  }
  return r;
}

}  // namespace hydisc
