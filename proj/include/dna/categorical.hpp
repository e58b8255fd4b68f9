#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dna/rng.hpp"

namespace dna {

// Numerically stable log softmax.
inline std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("log_softmax: empty logits");
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - peak);
  const double lse = peak + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out = log_softmax(logits);
  for (double& x : out) x = std::exp(x);
  return out;
}

// Draws an action from softmax(logits); returns the action and its log
// probability under the same distribution.
inline std::pair<int, double> sample_action(std::span<const double> logits, Rng& rng) {
  const std::vector<double> logp = log_softmax(logits);
  const double u = rng.uniform();
  double cum = 0.0;
  const int n = static_cast<int>(logits.size());
  for (int a = 0; a < n; ++a) {
    cum += std::exp(logp[a]);
    if (u < cum) return {a, logp[a]};
  }
  return {n - 1, logp[n - 1]};
}

inline int argmax_action(std::span<const double> logits) {
  return static_cast<int>(
      std::max_element(logits.begin(), logits.end()) - logits.begin());
}

// Entropy in nats of softmax(logits).
inline double entropy(std::span<const double> logits) {
  const std::vector<double> logp = log_softmax(logits);
  double h = 0.0;
  for (double lp : logp) {
    const double p = std::exp(lp);
    if (p > 0.0) h -= p * lp;
  }
  return h;
}

// KL(p || q) between the categorical distributions defined by two logit
// vectors. Argument order is (old, new) wherever a policy constraint is
// evaluated.
inline double kl_categorical(std::span<const double> p_logits, std::span<const double> q_logits) {
  if (p_logits.size() != q_logits.size())
    throw std::invalid_argument("kl_categorical: action counts differ");
  const std::vector<double> logp = log_softmax(p_logits);
  const std::vector<double> logq = log_softmax(q_logits);
  double kl = 0.0;
  for (std::size_t i = 0; i < logp.size(); ++i) {
    const double p = std::exp(logp[i]);
    if (p > 0.0) kl += p * (logp[i] - logq[i]);
  }
  return std::max(kl, 0.0);
}

}  // namespace dna
