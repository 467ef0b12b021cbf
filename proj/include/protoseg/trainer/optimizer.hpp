#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "protoseg/numcore/tensor.hpp"

namespace protoseg::train {

using num::Tensor;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers for one parameter group. Buffers are created lazily on
/// the first step and mirror the parameter shapes.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t t = 0;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One Adam update with bias correction. Weight decay is added to the
/// gradient (L2 form). A missing gradient counts as zero. Throws
/// NonFiniteGradient, leaving every parameter untouched, if any gradient
/// entry is NaN or infinite.
void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& cfg, double lr,
               double weight_decay);

/// base * (1 - step / max_steps)^power
double poly_lr(double base, std::int64_t step, std::int64_t max_steps, double power);

}  // namespace protoseg::train
