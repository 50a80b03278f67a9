#include "unadapt/optim.hpp"

#include <algorithm>
#include <cmath>

#include "unadapt/error.hpp"

namespace unadapt {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSGD ? "SGD" : "Adam"; }

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  std::string u = s;
  std::transform(u.begin(), u.end(), u.begin(), ::tolower);
  if (u == "sgd") return OptimizerKind::kSGD;
  if (u == "adam") return OptimizerKind::kAdam;
  throw ValidationError("unknown optimizer '" + s + "' (expected SGD or Adam)");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning rate must be positive");
  }
  if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ValidationError("weight decay must be non-negative");
}

namespace {

void check(std::span<double> p, std::span<const double> g, std::vector<double>& state) {
  if (p.size() != g.size()) throw ShapeError("optimizer: parameter/gradient length mismatch");
  if (state.empty()) state.assign(p.size(), 0.0);
  if (state.size() != p.size()) throw ShapeError("optimizer: slot changed length");
}

class Sgd final : public Optimizer {
 public:
  explicit Sgd(OptimizerConfig c) : c_(c) {}
  double learning_rate() const override { return c_.learning_rate; }

  void step(const std::string& slot, std::span<double> p, std::span<const double> g) override {
    auto& v = velocity_[slot];
    check(p, g, v);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double grad = g[i] + c_.weight_decay * p[i];
      v[i] = c_.momentum * v[i] + grad;
      p[i] -= c_.learning_rate * v[i];
    }
  }

 private:
  OptimizerConfig c_;
  std::map<std::string, std::vector<double>> velocity_;
};

class Adam final : public Optimizer {
 public:
  explicit Adam(OptimizerConfig c) : c_(c) {}
  double learning_rate() const override { return c_.learning_rate; }

  void step(const std::string& slot, std::span<double> p, std::span<const double> g) override {
    auto& m = first_[slot];
    auto& v = second_[slot];
    check(p, g, m);
    check(p, g, v);
    const int t = ++steps_[slot];
    const double bc1 = 1.0 - std::pow(c_.beta1, t);
    const double bc2 = 1.0 - std::pow(c_.beta2, t);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double grad = g[i] + c_.weight_decay * p[i];
      m[i] = c_.beta1 * m[i] + (1 - c_.beta1) * grad;
      v[i] = c_.beta2 * v[i] + (1 - c_.beta2) * grad * grad;
      p[i] -= c_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c_.epsilon);
    }
  }

 private:
  OptimizerConfig c_;
  std::map<std::string, std::vector<double>> first_, second_;
  std::map<std::string, int> steps_;
};

}  // namespace

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& config) {
  config.validate();
  if (config.kind == OptimizerKind::kSGD) return std::make_unique<Sgd>(config);
  return std::make_unique<Adam>(config);
}

}  // namespace unadapt
