#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "dna/matrix.hpp"
#include "dna/net.hpp"

namespace dna {

struct AdamConfig {
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standalone Adam moments, used where one parameter vector is trained by
// more than one optimizer (the distillation phase keeps its own moments for
// the policy parameters).
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long long step_count = 0;

  void resize(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    step_count = 0;
  }
};

// Bias-corrected Adam update, in place.
inline void adam_update(std::span<double> params, std::span<const double> grads,
                        std::span<double> m, std::span<double> v, long long& step_count,
                        const AdamConfig& cfg) {
  if (params.size() != grads.size() || params.size() != m.size() || params.size() != v.size())
    throw std::invalid_argument("adam_update: vector sizes differ");
  ++step_count;
  const double m_corr = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
  const double v_corr = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = m[i] / m_corr;
    const double v_hat = v[i] / v_corr;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

inline void adam_step(ParameterBlock& block, const AdamConfig& cfg) {
  adam_update(block.params, block.grads, block.adam_m, block.adam_v, block.step_count, cfg);
}

inline void adam_step(ParameterBlock& block, AdamState& state, const AdamConfig& cfg) {
  adam_update(block.params, block.grads, state.m, state.v, state.step_count, cfg);
}

// Rescales the gradient to exactly max_norm when its L2 norm exceeds it.
// Returns the pre-clip norm.
inline double clip_global_grad_norm(std::span<double> grads, double max_norm = 5.0) {
  const double norm = std::sqrt(squared_norm(grads));
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

}  // namespace dna
