#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dna/categorical.hpp"
#include "dna/envs.hpp"
#include "dna/matrix.hpp"
#include "dna/normalizer.hpp"
#include "dna/returns.hpp"
#include "dna/rng.hpp"

namespace dna {

// With probability p_repeat the previously executed action is executed
// instead of the intended one. last_action < 0 means there is no previous
// action yet.
inline int sticky_action(int intended, int last_action, double p_repeat, Rng& rng) {
  if (p_repeat <= 0.0 || last_action < 0) return intended;
  return (rng.uniform() < p_repeat) ? last_action : intended;
}

// Reward penalty (in normalized reward units) once the same action has been
// executed more than `threshold` times in a row.
inline double apply_repeat_penalty(double normalized_reward, int repeat_count,
                                   int threshold = 100, double penalty = 0.25) {
  return (repeat_count > threshold) ? normalized_reward - penalty : normalized_reward;
}

// Appends the episode-progress fraction and a one-hot of the previously
// executed action (all zeros when there is none). Restores the Markov
// property under episode timeouts and makes action repetition observable.
inline std::vector<double> augment_observation(std::span<const double> raw_obs,
                                               int steps_elapsed, int t_max, int prev_action,
                                               int action_count) {
  if (t_max <= 0) throw std::invalid_argument("augment_observation: t_max must be positive");
  std::vector<double> out;
  out.reserve(raw_obs.size() + 1 + static_cast<std::size_t>(action_count));
  out.insert(out.end(), raw_obs.begin(), raw_obs.end());
  out.push_back(static_cast<double>(steps_elapsed) / static_cast<double>(t_max));
  for (int a = 0; a < action_count; ++a) out.push_back(a == prev_action ? 1.0 : 0.0);
  return out;
}

struct EpisodeRecord {
  std::size_t env_index = 0;
  double raw_return = 0.0;
  int length = 0;
};

// A parallel environments behind the full wrapper stack: sticky actions,
// episode timeout, repeat-action penalty, observation augmentation, shared
// observation/reward normalization.
class VecEnv {
 public:
  VecEnv(EnvConfig cfg, std::size_t n_envs, double gamma, const Rng& root,
         bool update_normalizers = true)
      : cfg_(std::move(cfg)),
        t_max_(cfg_.effective_timeout()),
        update_normalizers_(update_normalizers),
        reward_normalizer_(n_envs, gamma) {
    if (n_envs == 0) throw std::invalid_argument("VecEnv: need at least one env");
    for (std::size_t i = 0; i < n_envs; ++i) {
      envs_.push_back(make_env(cfg_));
      env_rngs_.push_back(root.spawn(i));
    }
    action_count_ = envs_[0]->action_count();
    raw_dim_ = envs_[0]->obs_dim();
    obs_dim_ = raw_dim_ + 1 + static_cast<std::size_t>(action_count_);
    obs_normalizer_ = ObsNormalizer(obs_dim_);
    steps_elapsed_.assign(n_envs, 0);
    last_action_.assign(n_envs, -1);
    repeat_count_.assign(n_envs, 0);
    episode_return_.assign(n_envs, 0.0);
    episode_length_.assign(n_envs, 0);
    current_obs_.resize(n_envs, obs_dim_);
    reset_all();
  }

  std::size_t size() const { return envs_.size(); }
  std::size_t obs_dim() const { return obs_dim_; }
  int action_count() const { return action_count_; }
  int timeout() const { return t_max_; }
  const EnvConfig& config() const { return cfg_; }
  const Matrix& current_obs() const { return current_obs_; }
  int steps_elapsed(std::size_t i) const { return steps_elapsed_.at(i); }
  int last_action(std::size_t i) const { return last_action_.at(i); }
  int repeat_count(std::size_t i) const { return repeat_count_.at(i); }

  ObsNormalizer& obs_normalizer() { return obs_normalizer_; }
  const ObsNormalizer& obs_normalizer() const { return obs_normalizer_; }
  RewardNormalizer& reward_normalizer() { return reward_normalizer_; }
  const RewardNormalizer& reward_normalizer() const { return reward_normalizer_; }
  void set_update_normalizers(bool update) { update_normalizers_ = update; }

  void reset_all() {
    for (std::size_t i = 0; i < envs_.size(); ++i) {
      const std::vector<double> raw = envs_[i]->reset(env_rngs_[i]);
      steps_elapsed_[i] = 0;
      last_action_[i] = -1;
      repeat_count_[i] = 0;
      episode_return_[i] = 0.0;
      episode_length_[i] = 0;
      refresh_obs(i, raw);
    }
  }

  struct StepOutcome {
    double reward = 0.0;  // normalized, after repeat penalty
    double raw_reward = 0.0;
    bool terminal = false;
    int executed = -1;
  };

  StepOutcome step_env(std::size_t i, int intended_action) {
    const int executed =
        sticky_action(intended_action, last_action_[i], cfg_.sticky_prob, env_rngs_[i]);
    ToyEnv::StepResult sr = envs_[i]->step(executed);
    ++steps_elapsed_[i];
    const bool terminal = sr.terminal || steps_elapsed_[i] >= t_max_;
    repeat_count_[i] = (executed == last_action_[i]) ? repeat_count_[i] + 1 : 1;
    last_action_[i] = executed;
    episode_return_[i] += sr.reward;
    ++episode_length_[i];

    const double normalized =
        reward_normalizer_.normalize(i, sr.reward, terminal, update_normalizers_);
    const double reward =
        apply_repeat_penalty(normalized, repeat_count_[i], cfg_.repeat_threshold,
                             cfg_.repeat_penalty);

    std::vector<double> next_raw;
    if (terminal) {
      episodes_.push_back({i, episode_return_[i], episode_length_[i]});
      next_raw = envs_[i]->reset(env_rngs_[i]);
      steps_elapsed_[i] = 0;
      last_action_[i] = -1;
      repeat_count_[i] = 0;
      episode_return_[i] = 0.0;
      episode_length_[i] = 0;
    } else {
      next_raw = std::move(sr.obs);
    }
    refresh_obs(i, next_raw);
    return {reward, sr.reward, terminal, executed};
  }

  // Runs every env for a uniform-random number of uniform-random actions,
  // desynchronizing episode phases and seeding the normalizers.
  void warmup(Rng& rng) {
    const std::uint64_t upper =
        std::min<std::uint64_t>(1000, 2 * static_cast<std::uint64_t>(t_max_));
    for (std::size_t i = 0; i < envs_.size(); ++i) {
      const std::uint64_t steps = 1 + rng.below(upper);
      for (std::uint64_t s = 0; s < steps; ++s)
        step_env(i, static_cast<int>(rng.below(static_cast<std::uint64_t>(action_count_))));
    }
    episodes_.clear();
  }

  std::vector<EpisodeRecord> drain_episodes() {
    std::vector<EpisodeRecord> out;
    out.swap(episodes_);
    return out;
  }

  // Evaluation copy: same wrappers and frozen copies of the normalizer
  // statistics, fresh episodes, its own RNG streams.
  std::unique_ptr<VecEnv> clone_frozen(std::size_t n_envs, const Rng& root) const {
    auto copy = std::make_unique<VecEnv>(cfg_, n_envs, reward_normalizer_.gamma(), root, false);
    copy->obs_normalizer_.stats().restore(obs_normalizer_.stats().count(),
                                          obs_normalizer_.stats().raw_mean(),
                                          obs_normalizer_.stats().raw_m2());
    copy->reward_normalizer_.stats().restore(reward_normalizer_.stats().count(),
                                             reward_normalizer_.stats().raw_mean(),
                                             reward_normalizer_.stats().raw_m2());
    copy->reset_all();
    return copy;
  }

 private:
  void refresh_obs(std::size_t i, std::span<const double> raw) {
    const std::vector<double> augmented = augment_observation(
        raw, steps_elapsed_[i], t_max_, last_action_[i], action_count_);
    if (update_normalizers_) obs_normalizer_.update(augmented);
    const std::vector<double> normalized = obs_normalizer_.normalize(augmented);
    auto row = current_obs_.row(i);
    for (std::size_t d = 0; d < obs_dim_; ++d) row[d] = normalized[d];
  }

  EnvConfig cfg_;
  int t_max_;
  bool update_normalizers_;
  int action_count_ = 0;
  std::size_t raw_dim_ = 0;
  std::size_t obs_dim_ = 0;
  std::vector<std::unique_ptr<ToyEnv>> envs_;
  std::vector<Rng> env_rngs_;
  std::vector<int> steps_elapsed_;
  std::vector<int> last_action_;
  std::vector<int> repeat_count_;
  std::vector<double> episode_return_;
  std::vector<int> episode_length_;
  std::vector<EpisodeRecord> episodes_;
  ObsNormalizer obs_normalizer_{1};
  RewardNormalizer reward_normalizer_;
  Matrix current_obs_;
};

// On-policy experience from A envs x T steps. Row layout: sample (a, t)
// lives at index a * horizon + t, so each env's trajectory is contiguous.
struct RolloutBatch {
  std::size_t agents = 0;
  std::size_t horizon = 0;
  Matrix obs;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<std::uint8_t> terminals;
  std::vector<double> behavior_log_probs;
  std::vector<double> values;
  std::vector<double> bootstrap_values;

  std::size_t sample_count() const { return agents * horizon; }
  std::size_t index(std::size_t a, std::size_t t) const { return a * horizon + t; }

  Trajectory trajectory(std::size_t a) const {
    Trajectory traj;
    traj.rewards.assign(rewards.begin() + a * horizon, rewards.begin() + (a + 1) * horizon);
    traj.values.assign(values.begin() + a * horizon, values.begin() + (a + 1) * horizon);
    traj.terminals.resize(horizon);
    for (std::size_t t = 0; t < horizon; ++t) traj.terminals[t] = terminals[index(a, t)] != 0;
    traj.bootstrap_value = bootstrap_values.at(a);
    return traj;
  }

  void validate() const {
    const std::size_t n = sample_count();
    if (obs.rows != n || actions.size() != n || rewards.size() != n || terminals.size() != n ||
        behavior_log_probs.size() != n || values.size() != n ||
        bootstrap_values.size() != agents)
      throw std::invalid_argument("RolloutBatch: field shapes differ");
    if (!all_finite(behavior_log_probs) || !all_finite(values) || !all_finite(rewards))
      throw std::invalid_argument("RolloutBatch: non-finite entries");
  }
};

using BatchLogitsFn = std::function<void(const Matrix& obs, Matrix& logits)>;
using BatchValuesFn = std::function<void(const Matrix& obs, std::vector<double>& values)>;

// Runs the policy for `horizon` steps on every env, recording observations,
// intended actions with their sampling-time log probs, normalized rewards,
// terminals, and value-network estimates; bootstrap values are computed on
// the post-rollout observations.
inline RolloutBatch collect_rollout(VecEnv& env, const BatchLogitsFn& policy_logits,
                                    const BatchValuesFn& value_estimates, std::size_t horizon,
                                    Rng& rng) {
  if (horizon == 0) throw std::invalid_argument("collect_rollout: horizon must be positive");
  const std::size_t agents = env.size();
  RolloutBatch batch;
  batch.agents = agents;
  batch.horizon = horizon;
  batch.obs.resize(agents * horizon, env.obs_dim());
  batch.actions.assign(agents * horizon, 0);
  batch.rewards.assign(agents * horizon, 0.0);
  batch.terminals.assign(agents * horizon, 0);
  batch.behavior_log_probs.assign(agents * horizon, 0.0);
  batch.values.assign(agents * horizon, 0.0);
  batch.bootstrap_values.assign(agents, 0.0);

  Matrix logits;
  std::vector<double> values;
  for (std::size_t t = 0; t < horizon; ++t) {
    const Matrix& obs = env.current_obs();
    policy_logits(obs, logits);
    value_estimates(obs, values);
    if (logits.rows != agents || values.size() != agents)
      throw std::runtime_error("collect_rollout: model output shape mismatch");
    for (std::size_t a = 0; a < agents; ++a) {
      const std::size_t idx = batch.index(a, t);
      auto dst = batch.obs.row(idx);
      const auto src = obs.row(a);
      std::copy(src.begin(), src.end(), dst.begin());
      const auto [action, log_prob] = sample_action(logits.row(a), rng);
      VecEnv::StepOutcome outcome;
      try {
        outcome = env.step_env(a, action);
      } catch (const std::exception& e) {
        throw std::runtime_error("collect_rollout: env " + std::to_string(a) + ": " + e.what());
      }
      batch.actions[idx] = action;
      batch.behavior_log_probs[idx] = log_prob;
      batch.rewards[idx] = outcome.reward;
      batch.terminals[idx] = outcome.terminal ? 1 : 0;
      batch.values[idx] = values[a];
    }
  }
  value_estimates(env.current_obs(), values);
  for (std::size_t a = 0; a < agents; ++a) batch.bootstrap_values[a] = values[a];
  batch.validate();
  return batch;
}

}  // namespace dna
