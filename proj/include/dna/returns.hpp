#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "dna/matrix.hpp"

namespace dna {

// One truncated on-policy trajectory for a single environment. terminals[t]
// means the transition taken at step t ended the episode; the next step, if
// any, belongs to a fresh episode. bootstrap_value is the value estimate of
// the state reached after the last step and is only used when the trajectory
// was cut off mid-episode.
struct Trajectory {
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<bool> terminals;
  double bootstrap_value = 0.0;

  std::size_t length() const { return rewards.size(); }

  void validate() const {
    const std::size_t t = rewards.size();
    if (t == 0) throw std::invalid_argument("Trajectory: empty");
    if (values.size() != t || terminals.size() != t)
      throw std::invalid_argument("Trajectory: field lengths differ");
    if (!std::isfinite(bootstrap_value) || !all_finite(rewards) || !all_finite(values))
      throw std::invalid_argument("Trajectory: non-finite entry");
  }
};

// Discount/decay pair selecting one TD(lambda) estimator. gamma = 1 is
// rejected: the estimator's infinite sum assumes discounting.
struct ReturnConfig {
  double gamma = 0.999;
  double lam = 0.95;

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0))
      throw std::invalid_argument("ReturnConfig: gamma must be in [0, 1)");
    if (!(lam >= 0.0 && lam <= 1.0))
      throw std::invalid_argument("ReturnConfig: lam must be in [0, 1]");
  }
};

// k-step return from step t: sum_{i=0}^{k-1} gamma^i r_{t+i} + gamma^k V(s_{t+k}).
// A terminal inside the window truncates the sum and zeroes the tail value.
// When t + k == T the tail value is the trajectory's bootstrap value.
inline double nstep_return(const Trajectory& traj, std::size_t t, std::size_t k,
                           const ReturnConfig& cfg) {
  traj.validate();
  cfg.validate();
  const std::size_t horizon = traj.length();
  if (k == 0) throw std::invalid_argument("nstep_return: k must be positive");
  if (t >= horizon || t + k > horizon) throw std::out_of_range("nstep_return: t + k exceeds trajectory");

  double acc = 0.0;
  double discount = 1.0;
  for (std::size_t i = 0; i < k; ++i) {
    acc += discount * traj.rewards[t + i];
    if (traj.terminals[t + i]) return acc;
    discount *= cfg.gamma;
  }
  const double tail = (t + k == horizon) ? traj.bootstrap_value : traj.values[t + k];
  return acc + discount * tail;
}

// TD(lambda) returns for every step, truncated at the rollout horizon: the
// exponentially weighted NSTEP mixture with the weight mass beyond the
// horizon assigned to the longest available estimate. Backward recursion
//   G_t = r_t + gamma * ((1 - lam) * V(s_{t+1}) + lam * G_{t+1})
// anchored at the bootstrap value; terminal steps reset it to G_t = r_t.
inline std::vector<double> td_lambda_returns(const Trajectory& traj, const ReturnConfig& cfg) {
  traj.validate();
  cfg.validate();
  const std::size_t horizon = traj.length();
  std::vector<double> out(horizon);
  double carry = traj.bootstrap_value;
  for (std::size_t i = horizon; i-- > 0;) {
    if (traj.terminals[i]) {
      carry = traj.rewards[i];
    } else {
      const double next_value = (i + 1 == horizon) ? traj.bootstrap_value : traj.values[i + 1];
      carry = traj.rewards[i] + cfg.gamma * ((1.0 - cfg.lam) * next_value + cfg.lam * carry);
    }
    out[i] = carry;
  }
  return out;
}

// Value-network training targets: TD(gamma, lambda_v) returns.
inline std::vector<double> compute_value_targets(const Trajectory& traj, double lambda_v,
                                                 double gamma) {
  return td_lambda_returns(traj, ReturnConfig{gamma, lambda_v});
}

// Advantage estimates: TD(gamma, lambda_pi) returns minus the stored value
// estimates (equal to GAE with the same gamma and lambda).
inline std::vector<double> compute_advantages(const Trajectory& traj, double lambda_pi,
                                              double gamma) {
  std::vector<double> adv = td_lambda_returns(traj, ReturnConfig{gamma, lambda_pi});
  for (std::size_t i = 0; i < adv.size(); ++i) adv[i] -= traj.values[i];
  return adv;
}

// Standardize to zero mean and unit population std, with a floor on the std
// so constant inputs map to zeros.
inline std::vector<double> normalize_advantages(const std::vector<double>& adv) {
  if (adv.empty()) throw std::invalid_argument("normalize_advantages: empty input");
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  var /= static_cast<double>(adv.size());
  const double denom = std::max(std::sqrt(var), 1e-8);
  std::vector<double> out(adv.size());
  for (std::size_t i = 0; i < adv.size(); ++i) out[i] = (adv[i] - mean) / denom;
  return out;
}

}  // namespace dna
