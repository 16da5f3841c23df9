#pragma once

#include <optional>
#include <span>
#include <vector>

#include "hydisc/tensor.hpp"

namespace hydisc {

// Probabilities are floored at 1e-7 before any log, so loss values saturate
// near log(1e-7) instead of diverging.
inline constexpr double kProbFloor = 1e-7;

// mean_i log(1 - fake_i); minimized by the generator (drives fake scores up).
Tensor loss_generator(const Tensor& fake_scores);

// mean_i [log(1 - real_i) + log(fake_i)]; minimized by the discriminator
// (drives real scores up, fake scores down). Note this is the negation of
// the classic maximized form; both losses here are minimized as written.
Tensor loss_discriminator(const Tensor& real_scores, const Tensor& fake_scores);

// -log( exp(sim(anchor, positive)/tau) / sum_neg exp(sim(anchor, neg)/tau) ).
// The denominator holds only the negatives; set include_positive_in_denominator
// for the standard NT-Xent variant. sim is cosine similarity.
Tensor loss_real_contrastive(const Tensor& anchor_cls, const Tensor& positive_cls,
                             std::span<const Tensor> negatives_cls, double tau,
                             bool include_positive_in_denominator = false);

// -log( exp(sim(fake, real)/tau) / sum_other exp(sim(fake, other)/tau) ),
// others being the other fake <CLS> vectors on the same client.
Tensor loss_fake_contrastive(const Tensor& fake_cls, const Tensor& real_cls,
                             std::span<const Tensor> others_cls, double tau,
                             bool include_positive_in_denominator = false);

// Regression: mean squared error over the batch.
Tensor loss_task_regression(std::span<const Tensor> predictions, std::span<const double> targets);
// Classification: mean negative log-likelihood. Each prediction is a 1xK
// probability row summing to 1 within 1e-6.
Tensor loss_task_classification(std::span<const Tensor> probabilities,
                                std::span<const int> labels);

// (1 - lambda) * adversarial + lambda * contrastive. A skipped contrastive
// signal contributes exactly 0 through the same formula.
Tensor combine_discriminator(const Tensor& l_d, const std::optional<Tensor>& l_real, double lambda_d);
Tensor combine_generator(const Tensor& l_g, const std::optional<Tensor>& l_fake, double lambda_g);

// Per-round, per-client, per-modality loss values plus skip accounting.
struct LossReport {
  double l_g = 0.0;
  double l_d = 0.0;
  double l_real = 0.0;
  double l_fake = 0.0;
  int real_skipped = 0;  // anchors with no positive or no negatives
  int real_counted = 0;
  int fake_skipped = 0;  // fakes with no other fakes to contrast against
  int fake_counted = 0;
};

}  // namespace hydisc
