#include "nga/diff/adam.hpp"

#include <cmath>
#include <string>

#include "nga/error.hpp"

namespace nga::diff {

void adam_step(AdamState& state, std::span<Tensor> params, std::span<const std::vector<double>> grads) {
  if (params.size() != grads.size()) fail(ErrorKind::kArgument, "adam_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size()) {
      fail(ErrorKind::kArgument, "adam_step: gradient " + std::to_string(i) + " has " +
                                     std::to_string(grads[i].size()) + " values, parameter has " +
                                     std::to_string(params[i].size()));
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  } else if (state.first_moment.size() != params.size()) {
    fail(ErrorKind::kArgument, "adam_step: parameter set changed between steps");
  }

  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != values.size()) fail(ErrorKind::kArgument, "adam_step: moment shape mismatch");
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grads[i][j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      values[j] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

void Adam::step(ParameterSet& params) {
  std::vector<Tensor> tensors;
  std::vector<std::vector<double>> grads;
  tensors.reserve(params.size());
  grads.reserve(params.size());
  for (auto& [name, value] : params.entries()) {
    tensors.push_back(value);
    if (value.has_grad()) {
      grads.emplace_back(value.grad().begin(), value.grad().end());
    } else {
      grads.emplace_back(value.size(), 0.0);
    }
  }
  adam_step(state_, tensors, grads);
}

}  // namespace nga::diff
