#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dna/rng.hpp"

namespace dna {

// Small control environments standing in for the full-scale benchmark.
// Environments report only physical termination; episode timeouts are
// applied by the wrapper layer, which also injects the time feature.
class ToyEnv {
 public:
  struct StepResult {
    std::vector<double> obs;
    double reward = 0.0;
    bool terminal = false;
  };

  virtual ~ToyEnv() = default;
  virtual int action_count() const = 0;
  virtual std::size_t obs_dim() const = 0;
  virtual std::vector<double> reset(Rng& rng) = 0;
  virtual StepResult step(int action) = 0;
  virtual std::unique_ptr<ToyEnv> clone() const = 0;
};

// Classic pole-balancing cart with Euler-integrated dynamics. Reward is +1
// per step; the episode ends when the pole angle or cart position leaves
// its bound.
class CartPole final : public ToyEnv {
 public:
  struct State {
    double x = 0.0;
    double x_dot = 0.0;
    double theta = 0.0;
    double theta_dot = 0.0;
  };

  static constexpr double kGravity = 9.8;
  static constexpr double kMassCart = 1.0;
  static constexpr double kMassPole = 0.1;
  static constexpr double kTotalMass = kMassCart + kMassPole;
  static constexpr double kHalfPoleLength = 0.5;
  static constexpr double kPoleMassLength = kMassPole * kHalfPoleLength;
  static constexpr double kForceMag = 10.0;
  static constexpr double kTau = 0.02;
  static constexpr double kThetaThreshold = 12.0 * 2.0 * std::numbers::pi / 360.0;
  static constexpr double kXThreshold = 2.4;

  static State dynamics(const State& s, double force) {
    const double cos_theta = std::cos(s.theta);
    const double sin_theta = std::sin(s.theta);
    const double temp =
        (force + kPoleMassLength * s.theta_dot * s.theta_dot * sin_theta) / kTotalMass;
    const double theta_acc =
        (kGravity * sin_theta - cos_theta * temp) /
        (kHalfPoleLength * (4.0 / 3.0 - kMassPole * cos_theta * cos_theta / kTotalMass));
    const double x_acc = temp - kPoleMassLength * theta_acc * cos_theta / kTotalMass;
    State next;
    next.x = s.x + kTau * s.x_dot;
    next.x_dot = s.x_dot + kTau * x_acc;
    next.theta = s.theta + kTau * s.theta_dot;
    next.theta_dot = s.theta_dot + kTau * theta_acc;
    return next;
  }

  static bool out_of_bounds(const State& s) {
    return std::abs(s.x) > kXThreshold || std::abs(s.theta) > kThetaThreshold;
  }

  int action_count() const override { return 2; }
  std::size_t obs_dim() const override { return 4; }

  std::vector<double> reset(Rng& rng) override {
    state_.x = rng.uniform(-0.05, 0.05);
    state_.x_dot = rng.uniform(-0.05, 0.05);
    state_.theta = rng.uniform(-0.05, 0.05);
    state_.theta_dot = rng.uniform(-0.05, 0.05);
    return observation();
  }

  StepResult step(int action) override {
    if (action < 0 || action >= 2) throw std::invalid_argument("CartPole: action out of range");
    const double force = (action == 1) ? kForceMag : -kForceMag;
    state_ = dynamics(state_, force);
    return {observation(), 1.0, out_of_bounds(state_)};
  }

  std::unique_ptr<ToyEnv> clone() const override { return std::make_unique<CartPole>(*this); }

  const State& state() const { return state_; }
  void set_state(const State& s) { state_ = s; }

 private:
  std::vector<double> observation() const {
    return {state_.x, state_.x_dot, state_.theta, state_.theta_dot};
  }
  State state_;
};

// Deterministic N x N grid. The agent starts in one corner, the goal is the
// opposite corner; moving onto the goal pays +1 and ends the episode, every
// other step pays 0. Off-grid moves keep the agent in place. Observations
// are a one-hot of the cell index.
class Gridworld final : public ToyEnv {
 public:
  explicit Gridworld(int n = 5) : n_(n) {
    if (n < 2) throw std::invalid_argument("Gridworld: size must be at least 2");
  }

  int action_count() const override { return 4; }
  std::size_t obs_dim() const override { return static_cast<std::size_t>(n_) * n_; }

  std::vector<double> reset(Rng&) override {
    row_ = 0;
    col_ = 0;
    return observation();
  }

  StepResult step(int action) override {
    int row = row_, col = col_;
    switch (action) {
      case 0: row -= 1; break;
      case 1: row += 1; break;
      case 2: col -= 1; break;
      case 3: col += 1; break;
      default: throw std::invalid_argument("Gridworld: action out of range");
    }
    if (row >= 0 && row < n_ && col >= 0 && col < n_) {
      row_ = row;
      col_ = col;
    }
    const bool at_goal = (row_ == n_ - 1 && col_ == n_ - 1);
    return {observation(), at_goal ? 1.0 : 0.0, at_goal};
  }

  std::unique_ptr<ToyEnv> clone() const override { return std::make_unique<Gridworld>(*this); }

  int size() const { return n_; }
  int row() const { return row_; }
  int col() const { return col_; }

 private:
  std::vector<double> observation() const {
    std::vector<double> obs(obs_dim(), 0.0);
    obs[static_cast<std::size_t>(row_) * n_ + col_] = 1.0;
    return obs;
  }
  int n_;
  int row_ = 0;
  int col_ = 0;
};

struct EnvConfig {
  std::string name = "cartpole";
  int grid_size = 5;
  int timeout = 0;  // 0 selects the per-env default
  double sticky_prob = 0.0;
  int repeat_threshold = 100;
  double repeat_penalty = 0.25;
  bool warmup = true;

  int effective_timeout() const {
    if (timeout > 0) return timeout;
    return name == "gridworld" ? 200 : 500;
  }
};

inline std::unique_ptr<ToyEnv> make_env(const EnvConfig& cfg) {
  if (cfg.name == "cartpole") return std::make_unique<CartPole>();
  if (cfg.name == "gridworld") return std::make_unique<Gridworld>(cfg.grid_size);
  throw std::invalid_argument("unknown env: " + cfg.name);
}

}  // namespace dna
