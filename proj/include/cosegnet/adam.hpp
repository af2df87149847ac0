#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cosegnet/nn.hpp"

namespace coseg {

struct AdamParameters {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t halving_interval = 25000;
};

// base_lr * 0.5^floor(step / interval), step counted from 0.
inline double scheduled_learning_rate(double base_lr, std::uint64_t step, std::uint64_t interval) {
  return base_lr * std::pow(0.5, static_cast<double>(step / interval));
}

// One bias-corrected Adam update for a flat parameter block; t is the
// 1-based step number.
inline void adam_update(std::span<double> x, std::span<const double> grad, std::span<double> m,
                        std::span<double> v, std::uint64_t t, double lr, const AdamParameters& p) {
  const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g;
    v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    x[i] -= lr * mhat / (std::sqrt(vhat) + p.epsilon);
  }
}

struct AdamState {
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::uint64_t step = 0;  // completed updates
};

class Adam {
 public:
  Adam(const ParameterSet& params, AdamParameters hp) : hp_(hp) {
    for (const auto& [name, t] : params.entries()) {
      state_.first.emplace_back(t.size(), 0.0);
      state_.second.emplace_back(t.size(), 0.0);
    }
  }

  const AdamParameters& hyper() const { return hp_; }
  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }

  double current_learning_rate() const {
    return scheduled_learning_rate(hp_.learning_rate, state_.step, hp_.halving_interval);
  }

  // Applies one update from the parameters' grad slots (absent grad = 0).
  void step(ParameterSet& params) {
    const double lr = current_learning_rate();
    const std::uint64_t t = ++state_.step;
    std::size_t k = 0;
    for (const auto& entry : params.entries()) {
      Tensor p = entry.second;
      std::span<const double> g = p.has_grad() ? p.grad() : std::span<const double>{};
      adam_update(p.data(), g, state_.first[k], state_.second[k], t, lr, hp_);
      ++k;
    }
  }

 private:
  AdamParameters hp_;
  AdamState state_;
};

}  // namespace coseg
