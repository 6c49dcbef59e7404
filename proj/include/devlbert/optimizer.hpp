#pragma once

#include <string>
#include <vector>

#include "devlbert/tensor.hpp"

namespace devlbert {

/// A named learnable tensor. Names are slash-free dotted paths, unique within
/// a model, and double as the checkpoint record keys.
struct Parameter {
  std::string name;
  Tensor tensor;
};

struct OptimizerConfig {
  std::string type = "adam";  // "adam" or "sgd"
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam / SGD over a fixed parameter list. Parameters without a populated
/// gradient are treated as having zero gradient for the step.
class Optimizer {
 public:
  Optimizer(std::vector<Parameter> params, OptimizerConfig config);

  void step();
  void zero_grad();

  const std::vector<Parameter>& parameters() const { return params_; }
  const OptimizerConfig& config() const { return config_; }
  long step_count() const { return step_count_; }

 private:
  std::vector<Parameter> params_;
  OptimizerConfig config_;
  std::vector<std::vector<double>> m_, v_;  // adam state, per parameter
  long step_count_ = 0;
};

/// Throws ValidationError on duplicate names.
void check_unique_names(const std::vector<Parameter>& params);

}  // namespace devlbert
