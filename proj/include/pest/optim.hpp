#ifndef PEST_OPTIM_HPP_
#define PEST_OPTIM_HPP_

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pest/error.hpp"

namespace pest {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Per-parameter AdamW moments. One state per parameter vector.
struct AdamWState {
  AdamWConfig config;
  std::size_t step = 0;
  std::vector<double> m;
  std::vector<double> v;

  AdamWState() = default;
  AdamWState(std::size_t num_params, AdamWConfig cfg)
      : config(cfg), m(num_params, 0.0), v(num_params, 0.0) {}
};

/// One AdamW step with decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
inline void adamw_apply(AdamWState& state, std::span<double> params,
                        std::span<const double> grads, double lr) {
  require(params.size() == state.m.size() && grads.size() == params.size(),
          ErrorCode::ShapeMismatch,
          "adamw: " + std::to_string(params.size()) + " params, " +
              std::to_string(grads.size()) + " grads, state sized " +
              std::to_string(state.m.size()));
  require(lr >= 0.0, ErrorCode::ConfigError, "learning rate must be >= 0");
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * (m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * params[i]);
  }
}

/// Cosine annealing from base_lr down to min_lr over total_steps.
struct CosineSchedule {
  double base_lr = 1e-5;
  std::size_t total_steps = 1;
  double min_lr = 0.0;

  CosineSchedule() = default;
  CosineSchedule(double base, std::size_t total, double floor = 0.0)
      : base_lr(base), total_steps(total), min_lr(floor) {
    require(base_lr > 0.0, ErrorCode::ConfigError, "base_lr must be > 0");
    require(total_steps >= 1, ErrorCode::ConfigError, "total_steps must be >= 1");
    require(min_lr >= 0.0 && min_lr <= base_lr, ErrorCode::ConfigError,
            "min_lr must lie in [0, base_lr]");
  }

  double lr_at(std::size_t step) const {
    if (step > total_steps) {
      fail(ErrorCode::StepOutOfRange,
           "step " + std::to_string(step) + " beyond " + std::to_string(total_steps));
    }
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
  }
};

}  // namespace pest

#endif  // PEST_OPTIM_HPP_
