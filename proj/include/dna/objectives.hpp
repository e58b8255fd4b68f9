#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dna/categorical.hpp"
#include "dna/matrix.hpp"

namespace dna {

struct ClipConfig {
  double epsilon = 0.2;
  double entropy_coef = 0.001;

  void validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("ClipConfig: epsilon must be positive");
    if (!(entropy_coef >= 0.0))
      throw std::invalid_argument("ClipConfig: entropy_coef must be nonnegative");
  }
};

struct DistilConfig {
  double beta = 1.0;

  void validate() const {
    if (!(beta >= 0.0)) throw std::invalid_argument("DistilConfig: beta must be nonnegative");
  }
};

struct ClipLossResult {
  double loss = 0.0;
  Matrix dlogits;           // d loss / d logits
  double mean_entropy = 0.0;
  double clip_fraction = 0.0;  // samples where the clipped branch was selected
};

// Clipped-surrogate policy loss with entropy bonus, as a minimization
// objective: loss = -mean( min(rho*A, clip(rho, 1-eps, 1+eps)*A) + c_eb*S ).
// rho is exp(new_log_prob - old_log_prob) with new log probs computed from
// the logits, so the gradient is exact. The surrogate gradient is gated to
// zero where the clipped branch is selected; the entropy gradient never is.
inline ClipLossResult clip_surrogate_loss(const Matrix& logits, const std::vector<int>& actions,
                                          const std::vector<double>& old_log_probs,
                                          const std::vector<double>& advantages,
                                          const ClipConfig& cfg) {
  cfg.validate();
  const std::size_t n = logits.rows;
  if (n == 0) throw std::invalid_argument("clip_surrogate_loss: empty batch");
  if (actions.size() != n || old_log_probs.size() != n || advantages.size() != n)
    throw std::invalid_argument("clip_surrogate_loss: batch lengths differ");
  if (!all_finite(logits.data) || !all_finite(old_log_probs) || !all_finite(advantages))
    throw std::invalid_argument("clip_surrogate_loss: non-finite input");

  ClipLossResult result;
  result.dlogits.resize(logits.rows, logits.cols);
  const double inv_n = 1.0 / static_cast<double>(n);
  double objective = 0.0;
  std::size_t clipped = 0;

  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.row(i);
    const int a = actions[i];
    if (a < 0 || static_cast<std::size_t>(a) >= logits.cols)
      throw std::invalid_argument("clip_surrogate_loss: action out of range");
    const std::vector<double> logp = log_softmax(row);
    const double rho = std::exp(logp[a] - old_log_probs[i]);
    const double adv = advantages[i];
    const double surr_unclipped = rho * adv;
    const double rho_clipped = std::clamp(rho, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon);
    const double surr_clipped = rho_clipped * adv;
    const bool take_unclipped = surr_unclipped <= surr_clipped;
    if (!take_unclipped) ++clipped;

    double ent = 0.0;
    for (double lp : logp) {
      const double p = std::exp(lp);
      if (p > 0.0) ent -= p * lp;
    }
    objective += std::min(surr_unclipped, surr_clipped) + cfg.entropy_coef * ent;
    result.mean_entropy += ent;

    auto drow = result.dlogits.row(i);
    for (std::size_t j = 0; j < logits.cols; ++j) {
      const double p = std::exp(logp[j]);
      double g = 0.0;
      if (take_unclipped) {
        const double indicator = (static_cast<int>(j) == a) ? 1.0 : 0.0;
        g += rho * adv * (indicator - p);
      }
      if (p > 0.0) g += cfg.entropy_coef * (-p * (logp[j] + ent));
      drow[j] = -inv_n * g;
    }
  }
  result.loss = -inv_n * objective;
  result.mean_entropy *= inv_n;
  result.clip_fraction = static_cast<double>(clipped) * inv_n;
  return result;
}

struct ValueLossResult {
  double loss = 0.0;
  std::vector<double> dpred;
};

// Mean squared error between value predictions and fixed targets.
inline ValueLossResult value_mse_loss(const std::vector<double>& predicted,
                                      const std::vector<double>& targets) {
  if (predicted.size() != targets.size() || predicted.empty())
    throw std::invalid_argument("value_mse_loss: size mismatch or empty");
  const double inv_n = 1.0 / static_cast<double>(predicted.size());
  ValueLossResult result;
  result.dpred.resize(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double diff = predicted[i] - targets[i];
    result.loss += diff * diff;
    result.dpred[i] = 2.0 * diff * inv_n;
  }
  result.loss *= inv_n;
  return result;
}

struct DistilLossResult {
  double loss = 0.0;
  std::vector<double> dv_pi;  // gradient wrt the policy network's value head
  Matrix dlogits;             // gradient wrt the policy network's logits
  double value_term = 0.0;
  double kl_term = 0.0;
};

// Constrained distillation loss: mean squared error between the policy
// network's value head and (fixed) value-network targets, plus beta times
// the mean KL(old || new) between the pre-distillation policy snapshot and
// the live policy. Gradients flow to the policy network only; the targets
// are constants by construction.
inline DistilLossResult distillation_loss(const std::vector<double>& v_pi,
                                          const std::vector<double>& v_targets,
                                          const Matrix& new_logits, const Matrix& old_logits,
                                          const DistilConfig& cfg) {
  cfg.validate();
  const std::size_t n = v_pi.size();
  if (n == 0 || v_targets.size() != n || new_logits.rows != n || old_logits.rows != n ||
      new_logits.cols != old_logits.cols)
    throw std::invalid_argument("distillation_loss: shape mismatch");
  const double inv_n = 1.0 / static_cast<double>(n);

  DistilLossResult result;
  result.dv_pi.resize(n);
  result.dlogits.resize(new_logits.rows, new_logits.cols);
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = v_pi[i] - v_targets[i];
    result.value_term += diff * diff;
    result.dv_pi[i] = 2.0 * diff * inv_n;

    const std::vector<double> logp_old = log_softmax(old_logits.row(i));
    const std::vector<double> logp_new = log_softmax(new_logits.row(i));
    double kl = 0.0;
    for (std::size_t j = 0; j < logp_old.size(); ++j) {
      const double p_old = std::exp(logp_old[j]);
      if (p_old > 0.0) kl += p_old * (logp_old[j] - logp_new[j]);
    }
    result.kl_term += std::max(kl, 0.0);
    auto drow = result.dlogits.row(i);
    for (std::size_t j = 0; j < logp_old.size(); ++j)
      drow[j] = cfg.beta * inv_n * (std::exp(logp_new[j]) - std::exp(logp_old[j]));
  }
  result.value_term *= inv_n;
  result.kl_term *= inv_n;
  result.loss = result.value_term + cfg.beta * result.kl_term;
  return result;
}

}  // namespace dna
