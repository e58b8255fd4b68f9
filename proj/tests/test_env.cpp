#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstring>

#include "dna/envs.hpp"
#include "dna/normalizer.hpp"
#include "dna/rollout.hpp"
#include "dna/rng.hpp"
#include "support/env_oracles.hpp"

using dna::CartPole;
using dna::EnvConfig;
using dna::Gridworld;
using dna::Matrix;
using dna::Rng;
using dna::VecEnv;

namespace {

EnvConfig gridworld_cfg() {
  EnvConfig cfg;
  cfg.name = "gridworld";
  cfg.grid_size = 5;
  return cfg;
}

// Uniform-random policy over the env's actions.
dna::BatchLogitsFn uniform_policy(int action_count) {
  return [action_count](const Matrix& obs, Matrix& logits) {
    logits.resize(obs.rows, static_cast<std::size_t>(action_count));
    logits.zero();
  };
}

dna::BatchValuesFn zero_values() {
  return [](const Matrix& obs, std::vector<double>& values) {
    values.assign(obs.rows, 0.0);
  };
}

}  // namespace

TEST_CASE("cartpole equilibrium is a fixed point of the zero-force dynamics", "[env]") {
  CartPole::State s;  // exactly upright, at rest
  CartPole::State next = CartPole::dynamics(s, 0.0);
  CHECK(next.x == Catch::Approx(0.0).margin(1e-12));
  CHECK(next.x_dot == Catch::Approx(0.0).margin(1e-12));
  CHECK(next.theta == Catch::Approx(0.0).margin(1e-12));
  CHECK(next.theta_dot == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("cartpole terminates on angle or position bound", "[env]") {
  CartPole env;
  Rng rng(1);
  env.reset(rng);
  CartPole::State s;
  s.theta = CartPole::kThetaThreshold * 1.01;
  env.set_state(s);
  // One more step keeps the angle out of bounds and reports terminal.
  auto result = env.step(0);
  CHECK(result.terminal);
  CHECK(result.reward == 1.0);
  CHECK_THROWS_AS(env.step(5), std::invalid_argument);
}

TEST_CASE("gridworld reaches goal with reward 1 and terminal", "[env]") {
  Gridworld env(3);
  Rng rng(2);
  env.reset(rng);
  // Walk to (2,2): down, down, right, right.
  CHECK(env.step(1).terminal == false);
  CHECK(env.step(1).terminal == false);
  CHECK(env.step(3).terminal == false);
  auto last = env.step(3);
  CHECK(last.terminal);
  CHECK(last.reward == 1.0);

  // Off-grid moves keep the agent in place.
  env.reset(rng);
  auto stay = env.step(0);
  CHECK_FALSE(stay.terminal);
  CHECK(env.row() == 0);
  CHECK(env.col() == 0);
}

TEST_CASE("gridworld optimal value matches gamma^(d-1) at the start state", "[env]") {
  const double gamma = 0.99;
  for (int n : {3, 5, 7}) {
    auto v = oracle::gridworld_value_iteration(n, gamma);
    const int d = 2 * (n - 1);  // shortest path length from (0,0)
    CHECK(v[0] == Catch::Approx(std::pow(gamma, d - 1)).margin(1e-9));
  }
}

TEST_CASE("sticky_action edge probabilities", "[env]") {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    CHECK(dna::sticky_action(1, 0, 0.0, rng) == 1);
    CHECK(dna::sticky_action(1, 0, 1.0, rng) == 0);
    CHECK(dna::sticky_action(1, -1, 1.0, rng) == 1);  // no previous action yet
  }
}

TEST_CASE("sticky_action empirical frequency within 3 sigma of 0.25", "[env]") {
  Rng rng(4);
  const int steps = 100000;
  int repeats = 0;
  for (int i = 0; i < steps; ++i)
    if (dna::sticky_action(1, 0, 0.25, rng) == 0) ++repeats;
  const double sigma = std::sqrt(steps * 0.25 * 0.75);
  CHECK(std::abs(repeats - steps * 0.25) < 3.0 * sigma);
}

TEST_CASE("repeat penalty fires only above the threshold", "[env]") {
  CHECK(dna::apply_repeat_penalty(0.0, 100) == 0.0);
  CHECK(dna::apply_repeat_penalty(0.0, 101) == Catch::Approx(-0.25));
  CHECK(dna::apply_repeat_penalty(1.5, 101, 100, 0.25) == Catch::Approx(1.25));
  CHECK(dna::apply_repeat_penalty(1.5, 1) == 1.5);
}

TEST_CASE("augment_observation layout", "[env]") {
  std::vector<double> raw{0.5, -0.5};
  auto at_start = dna::augment_observation(raw, 0, 200, -1, 4);
  REQUIRE(at_start.size() == 2 + 1 + 4);
  CHECK(at_start[2] == 0.0);
  for (int i = 3; i < 7; ++i) CHECK(at_start[i] == 0.0);

  auto at_end = dna::augment_observation(raw, 200, 200, 2, 4);
  CHECK(at_end[2] == 1.0);
  CHECK(at_end[3] == 0.0);
  CHECK(at_end[4] == 0.0);
  CHECK(at_end[5] == 1.0);
  CHECK(at_end[6] == 0.0);
}

TEST_CASE("obs normalizer zero-centers and clips", "[env]") {
  dna::ObsNormalizer norm(2);
  std::vector<double> sample{5.0, -2.0};
  norm.update(sample);
  auto zeroed = norm.normalize(sample);
  CHECK(zeroed[0] == 0.0);
  CHECK(zeroed[1] == 0.0);

  Rng rng(6);
  for (int i = 0; i < 5000; ++i)
    norm.update(std::vector<double>{rng.normal(0.0, 1.0), rng.normal(0.0, 2.0)});
  auto clipped = norm.normalize(std::vector<double>{100.0, 0.0});
  CHECK(clipped[0] == 3.0);
  auto low = norm.normalize(std::vector<double>{-100.0, 0.0});
  CHECK(low[0] == -3.0);
}

TEST_CASE("obs normalizer converges on iid gaussian stream", "[env]") {
  Rng rng(7);
  dna::ObsNormalizer norm(1);
  for (int i = 0; i < 100000; ++i) norm.update(std::vector<double>{rng.normal(5.0, 2.0)});
  CHECK(norm.stats().mean(0) == Catch::Approx(5.0).epsilon(0.02));
  CHECK(std::sqrt(norm.stats().variance(0)) == Catch::Approx(2.0).epsilon(0.02));
}

TEST_CASE("reward normalizer start, clip, and unit-variance behavior", "[env]") {
  dna::RewardNormalizer norm(1, 0.99);
  // First reward passes through with std floor 1.
  CHECK(norm.normalize(0, 0.7, false) == Catch::Approx(0.7));

  // A reward far outside the established return scale clips to +-5.
  dna::RewardNormalizer clip_norm(1, 0.99);
  for (int i = 0; i < 1000; ++i) clip_norm.normalize(0, 0.1, (i % 50) == 49);
  CHECK(clip_norm.normalize(0, 1e9, false) == 5.0);
  CHECK(clip_norm.normalize(0, -1e9, false) == -5.0);

  // Constant rewards with episodic resets: the normalized discounted return
  // settles near unit variance.
  dna::RewardNormalizer unit(1, 0.99);
  dna::Welford norm_returns(1);
  double norm_accum = 0.0;
  int steps_in_episode = 0;
  for (int i = 0; i < 60000; ++i) {
    const bool terminal = (++steps_in_episode == 200);
    const double r = unit.normalize(0, 1.0, terminal);
    norm_accum = 0.99 * norm_accum + r;
    if (i > 20000) norm_returns.push(norm_accum);
    if (terminal) {
      norm_accum = 0.0;
      steps_in_episode = 0;
    }
  }
  const double std_norm = std::sqrt(norm_returns.variance(0));
  CHECK(std_norm > 0.9);
  CHECK(std_norm < 1.1);
}

TEST_CASE("vec env warmup desyncs and seeds normalizers", "[env]") {
  Rng root(11);
  VecEnv env(gridworld_cfg(), 8, 0.999, root);
  CHECK(env.obs_normalizer().count() > 0);  // initial observations
  for (std::size_t i = 0; i < env.size(); ++i) CHECK(env.steps_elapsed(i) == 0);

  Rng warm(12);
  env.warmup(warm);
  CHECK(env.obs_normalizer().count() > 8);
  bool any_desynced = false;
  for (std::size_t i = 0; i < env.size(); ++i) {
    CHECK(env.steps_elapsed(i) >= 0);
    CHECK(env.steps_elapsed(i) < env.timeout());
    if (env.steps_elapsed(i) != env.steps_elapsed(0)) any_desynced = true;
  }
  CHECK(any_desynced);
}

TEST_CASE("rollout shape, determinism, and reward accounting", "[env]") {
  auto run = [](std::uint64_t seed) {
    Rng root(seed);
    EnvConfig cfg = gridworld_cfg();
    VecEnv env(cfg, 4, 0.999, root);
    Rng collect(seed + 1);
    return dna::collect_rollout(env, uniform_policy(env.action_count()), zero_values(), 64,
                                collect);
  };
  auto a = run(99);
  auto b = run(99);
  CHECK(a.sample_count() == 4 * 64);
  CHECK(a.obs.rows == a.sample_count());
  CHECK(std::memcmp(a.obs.data.data(), b.obs.data.data(),
                    a.obs.data.size() * sizeof(double)) == 0);
  CHECK(a.actions == b.actions);
  CHECK(a.rewards == b.rewards);
  CHECK(a.bootstrap_values == b.bootstrap_values);
}

TEST_CASE("episode records account for raw env rewards", "[env]") {
  Rng root(13);
  EnvConfig cfg = gridworld_cfg();
  cfg.warmup = false;
  VecEnv env(cfg, 2, 0.999, root);
  Rng collect(14);
  auto batch =
      dna::collect_rollout(env, uniform_policy(env.action_count()), zero_values(), 512, collect);
  auto episodes = env.drain_episodes();
  REQUIRE(!episodes.empty());
  // Gridworld episodes pay exactly +1 when they end at the goal and 0 on
  // timeout; length is bounded by the timeout.
  for (const auto& ep : episodes) {
    CHECK((ep.raw_return == 1.0 || ep.raw_return == 0.0));
    CHECK(ep.length <= env.timeout());
    if (ep.length < env.timeout()) CHECK(ep.raw_return == 1.0);
  }
}

TEST_CASE("terminals mark episode boundaries inside the rollout", "[env]") {
  Rng root(15);
  EnvConfig cfg = gridworld_cfg();
  cfg.timeout = 16;  // force several episodes per rollout
  VecEnv env(cfg, 1, 0.999, root);
  Rng collect(16);
  auto batch =
      dna::collect_rollout(env, uniform_policy(env.action_count()), zero_values(), 128, collect);
  int terminals = 0;
  int since_last = 0;
  for (std::size_t t = 0; t < batch.horizon; ++t) {
    ++since_last;
    if (batch.terminals[t]) {
      ++terminals;
      CHECK(since_last <= 16);
      since_last = 0;
    }
  }
  CHECK(terminals >= 7);  // 128 steps with timeout 16
}

TEST_CASE("wrapper invariants over many random steps", "[env]") {
  Rng root(17);
  EnvConfig cfg;
  cfg.name = "cartpole";
  cfg.sticky_prob = 0.25;
  VecEnv env(cfg, 4, 0.999, root);
  Rng action_rng(18);

  int repeat_fires = 0;
  for (int step = 0; step < 20000; ++step) {
    for (std::size_t i = 0; i < env.size(); ++i) {
      const int prev_executed = env.last_action(i);
      auto outcome = env.step_env(i, action_rng.below_int(env.action_count()));
      // Penalty only when the executed action extends a run over the
      // threshold; episode resets zero the counter.
      if (outcome.executed != prev_executed && !outcome.terminal)
        CHECK(env.repeat_count(i) == 1);
      if (env.repeat_count(i) > cfg.repeat_threshold) ++repeat_fires;
      CHECK(std::abs(outcome.reward) <= 5.0 + cfg.repeat_penalty);
      for (double v : env.current_obs().row(i)) CHECK(std::abs(v) <= 3.0);
    }
  }
  // Random policy over 2 actions virtually never repeats 100+ times.
  CHECK(repeat_fires == 0);
}

TEST_CASE("frozen clone shares statistics but never updates them", "[env]") {
  Rng root(19);
  VecEnv env(gridworld_cfg(), 4, 0.999, root);
  Rng warm(20);
  env.warmup(warm);
  const long long count_before = env.obs_normalizer().count();

  auto frozen = env.clone_frozen(2, root.spawn(77));
  Rng collect(21);
  dna::collect_rollout(*frozen, uniform_policy(frozen->action_count()), zero_values(), 32,
                       collect);
  CHECK(frozen->obs_normalizer().count() == count_before);
  CHECK(env.obs_normalizer().count() == count_before);
}
