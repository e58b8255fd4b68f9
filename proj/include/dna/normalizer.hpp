#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace dna {

// Streaming per-dimension mean/variance via Welford's recurrence.
class Welford {
 public:
  explicit Welford(std::size_t dim = 1) : mean_(dim, 0.0), m2_(dim, 0.0) {}

  void push(std::span<const double> x) {
    if (x.size() != mean_.size()) throw std::invalid_argument("Welford: dim mismatch");
    ++count_;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double delta = x[i] - mean_[i];
      mean_[i] += delta / static_cast<double>(count_);
      m2_[i] += delta * (x[i] - mean_[i]);
    }
  }

  void push(double x) { push(std::span<const double>(&x, 1)); }

  long long count() const { return count_; }
  std::size_t dim() const { return mean_.size(); }
  double mean(std::size_t i) const { return mean_[i]; }
  double variance(std::size_t i) const {
    return count_ > 0 ? m2_[i] / static_cast<double>(count_) : 0.0;
  }

  const std::vector<double>& raw_mean() const { return mean_; }
  const std::vector<double>& raw_m2() const { return m2_; }
  void restore(long long count, std::vector<double> mean, std::vector<double> m2) {
    count_ = count;
    mean_ = std::move(mean);
    m2_ = std::move(m2);
  }

 private:
  long long count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

// Observation standardization: s' = clip((s - mean) / std, -3, 3) with a
// floor on std. Statistics are shared by every consumer of the stream; both
// networks read the same normalized observations.
class ObsNormalizer {
 public:
  explicit ObsNormalizer(std::size_t dim = 1) : stats_(dim) {}

  void update(std::span<const double> obs) { stats_.push(obs); }

  std::vector<double> normalize(std::span<const double> obs) const {
    if (obs.size() != stats_.dim()) throw std::invalid_argument("ObsNormalizer: dim mismatch");
    std::vector<double> out(obs.size());
    if (stats_.count() == 0) {
      for (std::size_t i = 0; i < obs.size(); ++i) out[i] = std::clamp(obs[i], -3.0, 3.0);
      return out;
    }
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const double sigma = std::max(std::sqrt(stats_.variance(i)), 1e-8);
      out[i] = std::clamp((obs[i] - stats_.mean(i)) / sigma, -3.0, 3.0);
    }
    return out;
  }

  long long count() const { return stats_.count(); }
  const Welford& stats() const { return stats_; }
  Welford& stats() { return stats_; }

 private:
  Welford stats_;
};

// Reward scaling so that discounted returns have roughly unit variance:
// each env keeps a discounted return accumulator R <- gamma R + r (reset at
// terminals); rewards are divided by the running std of the observed
// accumulator values and clipped to [-5, 5].
class RewardNormalizer {
 public:
  RewardNormalizer(std::size_t n_envs = 1, double gamma = 0.999)
      : gamma_(gamma), ret_accum_(n_envs, 0.0), ret_stats_(1) {}

  double normalize(std::size_t env_idx, double reward, bool terminal, bool update = true) {
    double& accum = ret_accum_.at(env_idx);
    accum = gamma_ * accum + reward;
    if (update) ret_stats_.push(accum);
    const double out = std::clamp(reward / current_std(), -5.0, 5.0);
    if (terminal) accum = 0.0;
    return out;
  }

  // Std floor of 1 until there is a variance estimate, so the first rewards
  // pass through unscaled.
  double current_std() const {
    if (ret_stats_.count() < 2) return 1.0;
    return std::max(std::sqrt(ret_stats_.variance(0)), 1e-8);
  }

  double accumulator(std::size_t env_idx) const { return ret_accum_.at(env_idx); }
  std::size_t env_count() const { return ret_accum_.size(); }
  double gamma() const { return gamma_; }
  const Welford& stats() const { return ret_stats_; }
  Welford& stats() { return ret_stats_; }
  std::vector<double>& accumulators() { return ret_accum_; }
  const std::vector<double>& accumulators() const { return ret_accum_; }

 private:
  double gamma_;
  std::vector<double> ret_accum_;
  Welford ret_stats_;
};

}  // namespace dna
