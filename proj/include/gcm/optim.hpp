#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gcm/errors.hpp"
#include "gcm/nn.hpp"

namespace gcm::optim {

enum class OptimizerKind { sgd, adam };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ArgumentError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
};

/// Plain SGD or bias-corrected Adam (beta1 0.9, beta2 0.999, eps 1e-8).
class Optimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind) {
    set_learning_rate(learning_rate);
  }

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  std::uint64_t step_count() const { return steps_; }
  const std::map<std::string, AdamMoments>& moments() const { return moments_; }

  void set_learning_rate(double lr) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ArgumentError("learning rate must be finite and >= 0");
    lr_ = lr;
  }

  void step(nn::ParameterStore& params) {
    for (const auto& [name, v] : params.all()) {
      if (!v.requires_grad() || v.grad().size() != v.size()) {
        throw StateError("optimizer step: parameter '" + name + "' has no gradient");
      }
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(kBeta1, t);
    const double c2 = 1.0 - std::pow(kBeta2, t);
    for (auto& [name, v] : params.all()) {
      auto theta = v.mutable_data();
      auto g = v.grad();
      if (kind_ == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr_ * g[i];
        continue;
      }
      auto& m = moments_[name];
      if (m.first.size() != theta.size()) {
        m.first.assign(theta.size(), 0.0);
        m.second.assign(theta.size(), 0.0);
      }
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m.first[i] = kBeta1 * m.first[i] + (1.0 - kBeta1) * g[i];
        m.second[i] = kBeta2 * m.second[i] + (1.0 - kBeta2) * g[i] * g[i];
        const double mhat = m.first[i] / c1;
        const double vhat = m.second[i] / c2;
        theta[i] -= lr_ * mhat / (std::sqrt(vhat) + kEpsilon);
      }
    }
  }

 private:
  OptimizerKind kind_;
  double lr_ = 0.0;
  std::uint64_t steps_ = 0;
  std::map<std::string, AdamMoments> moments_;
};

}  // namespace gcm::optim
