#include "devlbert/optimizer.hpp"

#include <cmath>
#include <set>
#include <utility>

#include "devlbert/error.hpp"

namespace devlbert {

void check_unique_names(const std::vector<Parameter>& params) {
  std::set<std::string> seen;
  for (const auto& p : params) {
    if (p.name.empty()) {
      throw ValidationError("parameter with empty name");
    }
    if (!seen.insert(p.name).second) {
      throw ValidationError("duplicate parameter name: " + p.name);
    }
  }
}

Optimizer::Optimizer(std::vector<Parameter> params, OptimizerConfig config)
    : params_(std::move(params)), config_(std::move(config)) {
  check_unique_names(params_);
  if (config_.type != "adam" && config_.type != "sgd") {
    throw ValidationError("unknown optimizer type: " + config_.type);
  }
  if (config_.type == "adam") {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }
}

void Optimizer::step() {
  ++step_count_;
  const double lr = config_.lr;
  const double wd = config_.weight_decay;
  if (config_.type == "sgd") {
    for (auto& p : params_) {
      auto& node = *p.tensor.node();
      if (!node.has_grad()) continue;
      for (int i = 0; i < p.tensor.numel(); ++i) {
        double g = node.grad[i] + wd * node.data[i];
        node.data[i] -= lr * g;
      }
    }
    return;
  }
  // adam with bias correction
  const double b1 = config_.beta1, b2 = config_.beta2, eps = config_.eps;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  for (size_t k = 0; k < params_.size(); ++k) {
    auto& node = *params_[k].tensor.node();
    if (!node.has_grad()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    const int n = static_cast<int>(node.data.size());
    for (int i = 0; i < n; ++i) {
      double g = node.grad[i] + wd * node.data[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      node.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) {
    p.tensor.zero_grad();
  }
}

}  // namespace devlbert
