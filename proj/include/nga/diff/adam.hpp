#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nga/diff/nn.hpp"

namespace nga::diff {

struct AdamConfig {
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  AdamConfig config;
};

// Bias-corrected Adam. `grads[i]` must have the size of `params[i]`.
void adam_step(AdamState& state, std::span<Tensor> params, std::span<const std::vector<double>> grads);

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) { state_.config = config; }

  // Uses each parameter's gradient slot; parameters without one see a zero gradient.
  void step(ParameterSet& params);
  const AdamState& state() const { return state_; }

 private:
  AdamState state_;
};

}  // namespace nga::diff
