#include "unadapt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unadapt/error.hpp"

namespace unadapt {

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kCE: return "CE";
    case LossKind::kLSCE: return "LSCE";
    case LossKind::kNCS: return "NCS";
  }
  return "?";
}

LossKind loss_kind_from_string(const std::string& s) {
  std::string u = s;
  std::transform(u.begin(), u.end(), u.begin(), ::toupper);
  if (u == "CE") return LossKind::kCE;
  if (u == "LSCE") return LossKind::kLSCE;
  if (u == "NCS" || u == "NC") return LossKind::kNCS;
  throw ValidationError("unknown loss kind '" + s + "' (expected CE, LSCE or NCS)");
}

void LossConfig::validate() const {
  if (!(smoothing_alpha >= 0.0 && smoothing_alpha < 1.0)) {
    throw ValidationError("smoothing alpha must lie in [0, 1)");
  }
  if (!std::isfinite(lambda_entropy) || lambda_entropy < 0.0) {
    throw ValidationError("entropy weight lambda must be finite and non-negative");
  }
  if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
    throw ValidationError("confidence threshold must lie in [0, 1]");
  }
}

TargetDistribution::TargetDistribution(Vector probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw ShapeError("empty target distribution");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("target probabilities must be finite and >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ValidationError("target probabilities must sum to 1");
}

TargetDistribution TargetDistribution::one_hot(std::size_t k, std::size_t num_classes) {
  if (k >= num_classes) throw ShapeError("one-hot index out of range");
  Vector p(num_classes, 0.0);
  p[k] = 1.0;
  return TargetDistribution(std::move(p));
}

TargetDistribution TargetDistribution::smoothed(double alpha) const {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ValidationError("smoothing alpha must lie in [0, 1)");
  Vector p(probs_);
  const double u = alpha / static_cast<double>(p.size());
  for (auto& v : p) v = (1.0 - alpha) * v + u;
  return TargetDistribution(std::move(p));
}

Vector log_softmax(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  const double lse = m + std::log(s);
  Vector out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

Vector softmax(std::span<const double> z) {
  Vector out = log_softmax(z);
  for (auto& v : out) v = std::exp(v);
  return out;
}

LossValue cross_entropy(std::span<const double> logits, const TargetDistribution& target) {
  if (logits.size() != target.size()) {
    throw ShapeError("cross-entropy: " + std::to_string(logits.size()) + " logits vs " +
                     std::to_string(target.size()) + " target classes");
  }
  const Vector logp = log_softmax(logits);
  const auto y = target.probs();
  LossValue out{0.0, Vector(logits.size())};
  double ysum = 0.0;
  for (std::size_t i = 0; i < logp.size(); ++i) {
    if (y[i] != 0.0) out.value -= y[i] * logp[i];
    ysum += y[i];
  }
  for (std::size_t i = 0; i < logp.size(); ++i) out.grad[i] = std::exp(logp[i]) * ysum - y[i];
  return out;
}

LossValue label_smoothing_ce(std::span<const double> logits, const TargetDistribution& target,
                             double alpha) {
  return cross_entropy(logits, target.smoothed(alpha));
}

LossValue negative_cosine_similarity(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw ShapeError("cosine similarity: length mismatch");
  const double np = norm2(pred);
  const double nt = norm2(target);
  if (np == 0.0 || nt == 0.0) throw DegenerateInputError("cosine similarity of a zero-norm vector");
  const double c = dot(pred, target) / (np * nt);
  LossValue out{-c, Vector(pred.size())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out.grad[i] = -(target[i] / (np * nt) - c * pred[i] / (np * np));
  }
  return out;
}

LossValue self_entropy(std::span<const double> logits) {
  const Vector logp = log_softmax(logits);
  LossValue out{0.0, Vector(logits.size())};
  Vector p(logp.size());
  for (std::size_t i = 0; i < logp.size(); ++i) {
    p[i] = std::exp(logp[i]);
    if (p[i] > 0.0) out.value -= p[i] * logp[i];
  }
  for (std::size_t i = 0; i < logp.size(); ++i) {
    out.grad[i] = p[i] > 0.0 ? -p[i] * (logp[i] + out.value) : 0.0;
  }
  return out;
}

namespace {

// Gradient w.r.t. logits of a function of p = softmax(logits), given dL/dp.
Vector softmax_backward(std::span<const double> p, std::span<const double> dp) {
  const double pg = dot(p, dp);
  Vector dz(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) dz[i] = p[i] * (dp[i] - pg);
  return dz;
}

LossValue consistency(LossKind kind, std::span<const double> pred_logits, const TargetDistribution& target,
                      double alpha) {
  switch (kind) {
    case LossKind::kCE: return cross_entropy(pred_logits, target);
    case LossKind::kLSCE: return label_smoothing_ce(pred_logits, target, alpha);
    case LossKind::kNCS: {
      const Vector p = softmax(pred_logits);
      LossValue ncs = negative_cosine_similarity(p, target.probs());
      ncs.grad = softmax_backward(p, ncs.grad);
      return ncs;
    }
  }
  throw ValidationError("unknown loss kind");
}

}  // namespace

Stage2Loss stage2_objective(std::span<const double> weak_logits, std::span<const double> strong_logits,
                            const LossConfig& cfg) {
  cfg.validate();
  if (weak_logits.size() != strong_logits.size()) {
    throw ShapeError("weak and strong branches disagree on the number of classes");
  }
  const std::size_t c = weak_logits.size();
  const Vector p_weak = softmax(weak_logits);
  const Vector p_strong = softmax(strong_logits);

  Stage2Loss out;
  LossValue w = consistency(cfg.kind, weak_logits, TargetDistribution(p_strong), cfg.smoothing_alpha);
  out.weak_loss = w.value;
  out.weak_grad = std::move(w.grad);

  out.pseudo_label = argmax(p_weak);
  out.masked = p_weak[out.pseudo_label] < cfg.confidence_threshold;
  const bool hard = cfg.kind != LossKind::kNCS && !cfg.soft_pseudo_labels;
  TargetDistribution pseudo = hard ? TargetDistribution::one_hot(out.pseudo_label, c) : TargetDistribution(p_weak);

  out.strong_grad.assign(c, 0.0);
  if (!out.masked) {
    LossValue s = consistency(cfg.kind, strong_logits, pseudo, cfg.smoothing_alpha);
    out.strong_consistency = s.value;
    out.strong_grad = std::move(s.grad);
  }
  LossValue ent = self_entropy(strong_logits);
  out.strong_entropy = ent.value;
  const double lambda = cfg.effective_lambda();
  if (lambda != 0.0) {
    for (std::size_t i = 0; i < c; ++i) out.strong_grad[i] += lambda * ent.grad[i];
  }
  out.strong_loss = out.strong_consistency + lambda * ent.value;
  return out;
}

}  // namespace unadapt
