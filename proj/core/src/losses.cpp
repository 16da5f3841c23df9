#include "hydisc/losses.hpp"

#include <cmath>
#include <string>

#include "hydisc/errors.hpp"

namespace hydisc {

namespace {

// Floors values at kProbFloor so the subsequent log stays finite.
Tensor safe_log(const Tensor& t) { return log(clamp_min(t, kProbFloor)); }

Tensor check_score_column(const Tensor& t, const char* who) {
  if (t.cols() != 1 || t.rows() < 1) {
    throw DimensionError(std::string(who) + " expects an Nx1 score column, got " + t.shape_str());
  }
  return t;
}

// -log( exp(s+/tau) / denom ) with denom = sum_neg exp(s-/tau)
// (+ exp(s+/tau) when include_positive). All similarities are cosine.
Tensor info_nce(const Tensor& anchor, const Tensor& positive,
                std::span<const Tensor> negatives, double tau, bool include_positive,
                const char* who) {
  if (tau <= 0.0) {
    throw ConfigError(std::string(who) + ": temperature must be positive, got " + std::to_string(tau));
  }
  if (negatives.empty()) {
    throw ContractError(std::string(who) + ": needs at least one negative; callers skip this term instead");
  }
  const double inv_tau = 1.0 / tau;
  const Tensor pos_logit = scale(cosine_similarity(anchor, positive), inv_tau);
  Tensor denom = include_positive ? exp(pos_logit) : Tensor();
  bool have_denom = include_positive;
  for (const Tensor& neg : negatives) {
    const Tensor term = exp(scale(cosine_similarity(anchor, neg), inv_tau));
    denom = have_denom ? add(denom, term) : term;
    have_denom = true;
  }
  return sub(log(denom), pos_logit);
}

}  // namespace

Tensor loss_generator(const Tensor& fake_scores) {
  check_score_column(fake_scores, "loss_generator");
  // mean log(1 - s)
  const Tensor one_minus = add_scalar(scale(fake_scores, -1.0), 1.0);
  return mean_all(safe_log(one_minus));
}

Tensor loss_discriminator(const Tensor& real_scores, const Tensor& fake_scores) {
  check_score_column(real_scores, "loss_discriminator");
  check_score_column(fake_scores, "loss_discriminator");
  if (real_scores.rows() != fake_scores.rows()) {
    throw DimensionError("loss_discriminator: real and fake score columns differ in length: " +
                         real_scores.shape_str() + " vs " + fake_scores.shape_str());
  }
  const Tensor one_minus_real = add_scalar(scale(real_scores, -1.0), 1.0);
  return mean_all(add(safe_log(one_minus_real), safe_log(fake_scores)));
}

Tensor loss_real_contrastive(const Tensor& anchor_cls, const Tensor& positive_cls,
                             std::span<const Tensor> negatives_cls, double tau,
                             bool include_positive_in_denominator) {
  return info_nce(anchor_cls, positive_cls, negatives_cls, tau,
                  include_positive_in_denominator, "loss_real_contrastive");
}

Tensor loss_fake_contrastive(const Tensor& fake_cls, const Tensor& real_cls,
                             std::span<const Tensor> others_cls, double tau,
                             bool include_positive_in_denominator) {
  return info_nce(fake_cls, real_cls, others_cls, tau,
                  include_positive_in_denominator, "loss_fake_contrastive");
}

Tensor loss_task_regression(std::span<const Tensor> predictions, std::span<const double> targets) {
  if (predictions.empty() || predictions.size() != targets.size()) {
    throw ContractError("loss_task_regression: predictions and targets must be non-empty and equal-sized");
  }
  Tensor total;
  bool first = true;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Tensor& p = predictions[i];
    if (p.rows() != 1 || p.cols() != 1) {
      throw DimensionError("loss_task_regression: prediction " + std::to_string(i) +
                           " must be 1x1, got " + p.shape_str());
    }
    const Tensor diff = add_scalar(p, -targets[i]);
    const Tensor sq = mul(diff, diff);
    total = first ? sq : add(total, sq);
    first = false;
  }
  return scale(total, 1.0 / static_cast<double>(predictions.size()));
}

Tensor loss_task_classification(std::span<const Tensor> probabilities,
                                std::span<const int> labels) {
  if (probabilities.empty() || probabilities.size() != labels.size()) {
    throw ContractError("loss_task_classification: probabilities and labels must be non-empty and equal-sized");
  }
  Tensor total;
  bool first = true;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const Tensor& p = probabilities[i];
    if (p.rows() != 1 || p.cols() < 2) {
      throw DimensionError("loss_task_classification: probability row " + std::to_string(i) +
                           " must be 1xK with K >= 2, got " + p.shape_str());
    }
    double mass = 0.0;
    for (int k = 0; k < p.cols(); ++k) mass += p.at(0, k);
    if (std::abs(mass - 1.0) > 1e-6) {
      throw ContractError("loss_task_classification: probability row " + std::to_string(i) +
                          " sums to " + std::to_string(mass) + ", expected 1 within 1e-6");
    }
    const int label = labels[i];
    if (label < 0 || label >= p.cols()) {
      throw ContractError("loss_task_classification: label " + std::to_string(label) +
                          " out of range for " + std::to_string(p.cols()) + " classes");
    }
    const Tensor picked = slice_cols(p, label, label + 1);
    const Tensor nll = scale(safe_log(picked), -1.0);
    total = first ? nll : add(total, nll);
    first = false;
  }
  return scale(total, 1.0 / static_cast<double>(probabilities.size()));
}

namespace {

void check_lambda(const char* who, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError(std::string(who) + ": weight must lie in [0, 1], got " +
                      std::to_string(lambda));
  }
}

}  // namespace

Tensor combine_discriminator(const Tensor& l_d, const std::optional<Tensor>& l_real, double lambda_d) {
  check_lambda("combine_discriminator", lambda_d);
  const Tensor weighted = scale(l_d, 1.0 - lambda_d);
  if (!l_real.has_value()) return weighted;  // skipped term contributes exactly 0
  return add(weighted, scale(*l_real, lambda_d));
}

Tensor combine_generator(const Tensor& l_g, const std::optional<Tensor>& l_fake, double lambda_g) {
  check_lambda("combine_generator", lambda_g);
  const Tensor weighted = scale(l_g, 1.0 - lambda_g);
  if (!l_fake.has_value()) return weighted;  // skipped term contributes exactly 0
  return add(weighted, scale(*l_fake, lambda_g));
}

}  // namespace hydisc
