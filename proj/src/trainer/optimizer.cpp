#include "protoseg/trainer/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace protoseg::train {

void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& cfg, double lr,
               double weight_decay) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (const double g : params[i].grad()) {
      if (!std::isfinite(g)) {
        throw NonFiniteGradient("adam_step: non-finite gradient in parameter " + std::to_string(i) +
                                " " + num::shape_str(params[i].shape()) + ", step skipped");
      }
    }
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].size(), 0.0);
      state.v[i].assign(params[i].size(), 0.0);
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].mutable_data();
    const auto grad = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double g = (grad.empty() ? 0.0 : grad[k]) + weight_decay * theta[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      theta[k] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double poly_lr(double base, std::int64_t step, std::int64_t max_steps, double power) {
  if (max_steps <= 0) return base;
  const double frac = static_cast<double>(step) / static_cast<double>(max_steps);
  return base * std::pow(std::max(0.0, 1.0 - frac), power);
}

}  // namespace protoseg::train
