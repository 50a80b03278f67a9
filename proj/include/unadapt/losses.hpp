#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "unadapt/util.hpp"

namespace unadapt {

enum class LossKind { kCE, kLSCE, kNCS };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& s);

struct LossConfig {
  LossKind kind = LossKind::kCE;
  double smoothing_alpha = 0.1;  // LSCE only, in [0, 1)
  double lambda_entropy = 1.0;
  bool entropy_enabled = true;
  // Pseudo-labels whose weak-branch confidence is below this are dropped from
  // the strong consistency term. 0 keeps every sample.
  double confidence_threshold = 0.0;
  // Use the weak branch's full distribution instead of its argmax one-hot.
  bool soft_pseudo_labels = false;

  double effective_lambda() const { return entropy_enabled ? lambda_entropy : 0.0; }
  void validate() const;
};

// A probability vector: non-negative entries summing to 1 within 1e-6.
class TargetDistribution {
 public:
  explicit TargetDistribution(Vector probs);
  static TargetDistribution one_hot(std::size_t k, std::size_t num_classes);

  // (1 - alpha) * target + alpha / C
  TargetDistribution smoothed(double alpha) const;

  std::span<const double> probs() const { return probs_; }
  std::size_t size() const { return probs_.size(); }

 private:
  Vector probs_;
};

// Loss value and its gradient w.r.t. the prediction argument.
struct LossValue {
  double value = 0.0;
  Vector grad;
};

Vector softmax(std::span<const double> logits);
Vector log_softmax(std::span<const double> logits);

// -target^T log softmax(logits)
LossValue cross_entropy(std::span<const double> logits, const TargetDistribution& target);

// cross_entropy against (1 - alpha) * target + alpha / C
LossValue label_smoothing_ce(std::span<const double> logits, const TargetDistribution& target,
                             double alpha);

// -(pred . target) / (|pred| |target|); gradient w.r.t. pred.
LossValue negative_cosine_similarity(std::span<const double> pred, std::span<const double> target);

// -sum p log p with p = softmax(logits).
LossValue self_entropy(std::span<const double> logits);

struct Stage2Loss {
  double weak_loss = 0.0;
  double strong_loss = 0.0;  // consistency + lambda * entropy
  double strong_consistency = 0.0;
  double strong_entropy = 0.0;  // unweighted self-entropy of the strong branch
  Vector weak_grad;    // d weak_loss / d weak logits
  Vector strong_grad;  // d strong_loss / d strong logits
  std::size_t pseudo_label = 0;
  bool masked = false;  // consistency term dropped by the confidence threshold
};

// Weak branch: consistency(target = stop-grad softmax(strong), pred = weak).
// Strong branch: consistency(target = stop-grad pseudo-label from weak,
// pred = strong) + lambda * self_entropy(strong).
Stage2Loss stage2_objective(std::span<const double> weak_logits, std::span<const double> strong_logits,
                            const LossConfig& cfg);

}  // namespace unadapt
