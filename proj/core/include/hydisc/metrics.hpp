#pragma once

#include <span>

namespace hydisc {

// Regression-score quality measures. The two binary accuracy/F1 pairs differ
// in how they treat a true score of exactly zero: `acc2_nonneg` buckets it
// with the positives and keeps every sample, while `acc2_strict` drops
// zero-score samples and compares negative against strictly positive. F1
// treats "negative" as the positive detection class in both conventions.
struct MetricsRecord {
  int n = 0;             // all samples
  int n_strict = 0;      // samples with y != 0
  double acc2_nonneg = 0.0;
  double f1_nonneg = 0.0;
  double acc2_strict = 0.0;
  double f1_strict = 0.0;
  double acc7 = 0.0;     // nearest integer class in [-3, 3]
  double mae = 0.0;
  double corr = 0.0;     // Pearson correlation; 0 when either side is constant
  bool corr_degenerate = false;
};

// Pairs are matched by index; sizes must agree and be non-empty.
MetricsRecord compute_metrics(std::span<const double> y_true, std::span<const double> y_hat);

}  // namespace hydisc
