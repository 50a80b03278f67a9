#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace unadapt {

enum class OptimizerKind { kSGD, kAdam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSGD;
  double learning_rate = 1e-2;
  double momentum = 0.9;  // SGD only
  double weight_decay = 0.0;
  double beta1 = 0.9;     // Adam only
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

// First-order optimizer over named parameter slots. Each slot keeps its own
// state; params and grads of one slot must keep a fixed length.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(const std::string& slot, std::span<double> params, std::span<const double> grads) = 0;
  virtual double learning_rate() const = 0;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& config);

}  // namespace unadapt
