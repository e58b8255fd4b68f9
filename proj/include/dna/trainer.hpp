#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dna/checkpoint.hpp"
#include "dna/envs.hpp"
#include "dna/matrix.hpp"
#include "dna/metrics.hpp"
#include "dna/net.hpp"
#include "dna/noise_scale.hpp"
#include "dna/objectives.hpp"
#include "dna/optim.hpp"
#include "dna/returns.hpp"
#include "dna/rollout.hpp"
#include "dna/rng.hpp"

namespace dna {

enum class TrainMode { dna_dual, ppo_joint };

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "dna_dual") return TrainMode::dna_dual;
  if (s == "ppo_joint") return TrainMode::ppo_joint;
  throw std::invalid_argument("unknown mode: " + s);
}

struct DnaConfig {
  double gamma = 0.999;
  double lambda_pi = 0.8;
  double lambda_v = 0.95;
  double epsilon = 0.2;
  double entropy_coef = 0.001;
  double lr = 2.5e-4;
  std::size_t horizon = 128;  // T
  std::size_t agents = 128;   // A
  int epochs_policy = 2;      // E_pi
  int epochs_value = 1;       // E_V
  int epochs_distil = 2;      // E_D
  double beta = 1.0;
  std::size_t mb_policy = 2048;
  std::size_t mb_value = 512;
  std::size_t mb_distil = 512;
  double grad_clip = 5.0;
  long long total_interactions = 1LL << 20;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::dna_dual;
  bool anneal_lr = false;   // linearly anneal lr and entropy bonus to zero
  double value_coef = 0.5;  // joint-mode value loss coefficient

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("config: gamma in [0,1)");
    if (!(lambda_pi >= 0.0 && lambda_pi <= 1.0))
      throw std::invalid_argument("config: lambda_pi in [0,1]");
    if (!(lambda_v >= 0.0 && lambda_v <= 1.0))
      throw std::invalid_argument("config: lambda_v in [0,1]");
    if (!(epsilon > 0.0)) throw std::invalid_argument("config: epsilon > 0");
    if (entropy_coef < 0.0) throw std::invalid_argument("config: entropy_coef >= 0");
    if (!(lr > 0.0)) throw std::invalid_argument("config: lr > 0");
    if (horizon == 0 || agents == 0) throw std::invalid_argument("config: horizon and agents > 0");
    if (epochs_policy < 0 || epochs_value < 0 || epochs_distil < 0)
      throw std::invalid_argument("config: epochs >= 0");
    if (beta < 0.0) throw std::invalid_argument("config: beta >= 0");
    if (mb_policy == 0 || mb_value == 0 || mb_distil == 0)
      throw std::invalid_argument("config: mini-batch sizes > 0");
    if (!(grad_clip > 0.0)) throw std::invalid_argument("config: grad_clip > 0");
    if (total_interactions <= 0) throw std::invalid_argument("config: total_interactions > 0");
    if (value_coef < 0.0) throw std::invalid_argument("config: value_coef >= 0");
  }
};

struct TrainSetup {
  DnaConfig dna;
  EnvConfig env;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::relu;
  InitScheme init = InitScheme::orthogonal;
  bool probe_enabled = true;
  std::size_t probe_b_small = 16;
  std::size_t probe_b_big = 0;  // 0 selects the full rollout batch
  double probe_ema_decay = 0.99;
  int checkpoint_interval = 0;  // outer iterations; 0 writes only the final one
  int eval_episodes = 100;
  int eval_interval = 0;  // outer iterations; 0 evaluates only at the end
  std::string out_dir;    // empty disables file outputs
};

struct PhaseStats {
  double mean_loss = 0.0;
  int updates = 0;
  double mean_entropy = 0.0;
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
};

struct EvalResult {
  double mean_return = 0.0;
  double mean_discounted_return = 0.0;
  double mean_length = 0.0;
  int episodes = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shuffled index partitions covering [0, n): every index appears exactly
// once per epoch; a trailing partial mini-batch is dropped.
inline std::vector<std::vector<std::size_t>> minibatch_partitions(std::size_t n,
                                                                  std::size_t mb_size,
                                                                  Rng& rng) {
  if (n == 0 || mb_size == 0) throw std::invalid_argument("minibatch_partitions: empty");
  mb_size = std::min(mb_size, n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start + mb_size <= n; start += mb_size)
    out.emplace_back(order.begin() + start, order.begin() + start + mb_size);
  return out;
}

inline Matrix gather_rows(const Matrix& src, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), src.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto row = src.row(idx[i]);
    std::copy(row.begin(), row.end(), out.row(i).begin());
  }
  return out;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& src, std::span<const std::size_t> idx) {
  std::vector<T> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = src[idx[i]];
  return out;
}

// Three-phase DNA training loop, with the joint-network PPO baseline as a
// degenerate configuration (single network, combined loss, no value or
// distillation phase).
class Trainer {
 public:
  explicit Trainer(TrainSetup setup, MetricsWriter* metrics = nullptr)
      : setup_(std::move(setup)), metrics_(metrics) {
    setup_.dna.validate();
    root_ = Rng(setup_.dna.seed);
    Rng init_rng = root_.spawn(1);
    rng_env_root_ = root_.spawn(2);
    rng_collect_ = root_.spawn(3);
    rng_shuffle_ = root_.spawn(4);
    rng_probe_ = root_.spawn(5);
    rng_eval_root_ = root_.spawn(6);
    Rng warmup_rng = root_.spawn(7);

    env_ = std::make_unique<VecEnv>(setup_.env, setup_.dna.agents, setup_.dna.gamma,
                                    rng_env_root_);
    if (setup_.env.warmup) env_->warmup(warmup_rng);

    NetSpec policy_spec{env_->obs_dim(), setup_.hidden,
                        {{"logits", static_cast<std::size_t>(env_->action_count())},
                         {"value", 1}},
                        setup_.activation};
    policy_net_ = std::make_unique<Mlp>(policy_spec);
    policy_.resize(policy_net_->param_count());
    policy_net_->init_params(policy_.params, init_rng, setup_.init);
    distil_adam_.resize(policy_net_->param_count());
    pi_old_ = policy_.params;

    if (setup_.dna.mode == TrainMode::dna_dual) {
      NetSpec value_spec{env_->obs_dim(), setup_.hidden, {{"value", 1}}, setup_.activation};
      value_net_ = std::make_unique<Mlp>(value_spec);
      value_.resize(value_net_->param_count());
      value_net_->init_params(value_.params, init_rng, setup_.init);
    }

    const std::size_t samples = setup_.dna.agents * setup_.dna.horizon;
    probe_b_big_ = setup_.probe_b_big == 0 ? samples : std::min(setup_.probe_b_big, samples);
    probes_usable_ = setup_.probe_enabled && setup_.probe_b_small < probe_b_big_;
    for (NoiseScaleProbe* probe : {&probe_policy_, &probe_value_, &probe_distil_}) {
      probe->b_small = setup_.probe_b_small;
      probe->b_big = probe_b_big_;
      probe->ema_decay = setup_.probe_ema_decay;
    }
    if (probes_usable_ && probe_policy_.wants_ratio_warning() && metrics_)
      metrics_->event({{"event", "warning"},
                       {"message", "probe b_big is within 10x of b_small; Eq. 4-5 estimates "
                                   "will be imprecise"}});
  }

  const DnaConfig& config() const { return setup_.dna; }
  const TrainSetup& setup() const { return setup_; }
  long long interactions() const { return interactions_; }
  long long iteration() const { return iteration_; }
  long long outer_iterations() const {
    const long long per_iter =
        static_cast<long long>(setup_.dna.agents) * static_cast<long long>(setup_.dna.horizon);
    return (setup_.dna.total_interactions + per_iter - 1) / per_iter;
  }

  const ParameterBlock& policy_block() const { return policy_; }
  const ParameterBlock& value_block() const { return value_; }
  const std::vector<double>& pi_old() const { return pi_old_; }
  const Mlp& policy_net() const { return *policy_net_; }
  const Mlp& value_net() const { return *value_net_; }
  VecEnv& env() { return *env_; }
  const NoiseScaleProbe& probe_policy() const { return probe_policy_; }
  const NoiseScaleProbe& probe_value() const { return probe_value_; }
  const NoiseScaleProbe& probe_distil() const { return probe_distil_; }
  double latest_sigma_policy() const { return sigma_policy_; }
  double latest_sigma_value() const { return sigma_value_; }
  double latest_sigma_distil() const { return sigma_distil_; }

  RolloutBatch collect() {
    auto logits_fn = [this](const Matrix& obs, Matrix& logits) { policy_logits(obs, logits); };
    auto values_fn = [this](const Matrix& obs, std::vector<double>& values) {
      value_estimates(obs, values);
    };
    RolloutBatch batch =
        collect_rollout(*env_, logits_fn, values_fn, setup_.dna.horizon, rng_collect_);
    interactions_ +=
        static_cast<long long>(setup_.dna.agents) * static_cast<long long>(setup_.dna.horizon);
    return batch;
  }

  // Value targets via TD(lambda_v) and advantages via TD(lambda_pi) - V,
  // both from the values stored at collection time.
  void compute_targets(const RolloutBatch& batch, std::vector<double>& value_targets,
                       std::vector<double>& advantages) const {
    const std::size_t n = batch.sample_count();
    value_targets.resize(n);
    advantages.resize(n);
    for (std::size_t a = 0; a < batch.agents; ++a) {
      const Trajectory traj = batch.trajectory(a);
      const std::vector<double> targets =
          compute_value_targets(traj, setup_.dna.lambda_v, setup_.dna.gamma);
      const std::vector<double> adv =
          compute_advantages(traj, setup_.dna.lambda_pi, setup_.dna.gamma);
      for (std::size_t t = 0; t < batch.horizon; ++t) {
        value_targets[batch.index(a, t)] = targets[t];
        advantages[batch.index(a, t)] = adv[t];
      }
    }
  }

  PhaseStats policy_phase(const RolloutBatch& batch, const std::vector<double>& norm_adv) {
    PhaseStats stats;
    const ClipConfig clip_cfg{setup_.dna.epsilon, effective_entropy_coef()};
    const AdamConfig adam_cfg = adam_config();
    for (int epoch = 0; epoch < setup_.dna.epochs_policy; ++epoch) {
      for (const auto& idx :
           minibatch_partitions(batch.sample_count(), setup_.dna.mb_policy, rng_shuffle_)) {
        const Matrix obs = gather_rows(batch.obs, idx);
        const std::vector<int> actions = gather(batch.actions, idx);
        const std::vector<double> old_lp = gather(batch.behavior_log_probs, idx);
        const std::vector<double> adv = gather(norm_adv, idx);

        std::vector<Matrix> heads;
        Mlp::Cache cache;
        policy_net_->forward(policy_.params, obs, heads, &cache);
        auto res = clip_surrogate_loss(heads[0], actions, old_lp, adv, clip_cfg);
        check_finite(res.loss, "policy");

        std::vector<Matrix> head_grads{res.dlogits, Matrix(idx.size(), 1)};
        if (setup_.dna.mode == TrainMode::ppo_joint) {
          // Combined loss: value head trained in the same update.
          const std::vector<double> v_pred = heads[1].data;
          const std::vector<double> targets = gather(*joint_value_targets_, idx);
          auto vres = value_mse_loss(v_pred, targets);
          check_finite(vres.loss, "policy");
          for (std::size_t i = 0; i < idx.size(); ++i)
            head_grads[1](i, 0) = setup_.dna.value_coef * vres.dpred[i];
          stats.mean_loss += res.loss + setup_.dna.value_coef * vres.loss;
        } else {
          stats.mean_loss += res.loss;
        }
        policy_.zero_grads();
        policy_net_->backward(policy_.params, cache, head_grads, policy_.grads);
        clip_global_grad_norm(policy_.grads, setup_.dna.grad_clip);
        adam_step(policy_, adam_cfg);
        ++stats.updates;
        stats.mean_entropy += res.mean_entropy;
        stats.clip_fraction += res.clip_fraction;
      }
    }
    finalize(stats);
    return stats;
  }

  PhaseStats value_phase(const RolloutBatch& batch, const std::vector<double>& value_targets) {
    PhaseStats stats;
    if (setup_.dna.mode != TrainMode::dna_dual) return stats;
    const AdamConfig adam_cfg = adam_config();
    for (int epoch = 0; epoch < setup_.dna.epochs_value; ++epoch) {
      for (const auto& idx :
           minibatch_partitions(batch.sample_count(), setup_.dna.mb_value, rng_shuffle_)) {
        const Matrix obs = gather_rows(batch.obs, idx);
        const std::vector<double> targets = gather(value_targets, idx);
        std::vector<Matrix> heads;
        Mlp::Cache cache;
        value_net_->forward(value_.params, obs, heads, &cache);
        auto res = value_mse_loss(heads[0].data, targets);
        check_finite(res.loss, "value");
        std::vector<Matrix> head_grads{Matrix(idx.size(), 1)};
        head_grads[0].data = res.dpred;
        value_.zero_grads();
        value_net_->backward(value_.params, cache, head_grads, value_.grads);
        clip_global_grad_norm(value_.grads, setup_.dna.grad_clip);
        adam_step(value_, adam_cfg);
        ++stats.updates;
        stats.mean_loss += res.loss;
      }
    }
    finalize(stats);
    return stats;
  }

  // Snapshots pi_old, then runs E_D epochs of distillation on the policy
  // network with its own Adam state. Targets come from the frozen value
  // network, recomputed each epoch; the value network is never touched.
  PhaseStats distill_phase(const RolloutBatch& batch) {
    pi_old_ = snapshot_params(policy_);
    PhaseStats stats;
    if (setup_.dna.mode != TrainMode::dna_dual || setup_.dna.epochs_distil == 0) {
      finalize(stats);
      return stats;
    }
    const DistilConfig distil_cfg{setup_.dna.beta};
    const AdamConfig adam_cfg = adam_config();

    Matrix old_logits_all;
    {
      std::vector<Matrix> heads;
      policy_net_->forward(pi_old_, batch.obs, heads);
      old_logits_all = std::move(heads[0]);
    }
    for (int epoch = 0; epoch < setup_.dna.epochs_distil; ++epoch) {
      std::vector<double> targets(batch.sample_count());
      {
        std::vector<double> values;
        value_estimates(batch.obs, values);
        targets = std::move(values);
      }
      for (const auto& idx :
           minibatch_partitions(batch.sample_count(), setup_.dna.mb_distil, rng_shuffle_)) {
        const Matrix obs = gather_rows(batch.obs, idx);
        const std::vector<double> mb_targets = gather(targets, idx);
        const Matrix old_logits = gather_rows(old_logits_all, idx);
        std::vector<Matrix> heads;
        Mlp::Cache cache;
        policy_net_->forward(policy_.params, obs, heads, &cache);
        auto res = distillation_loss(heads[1].data, mb_targets, heads[0], old_logits, distil_cfg);
        check_finite(res.loss, "distil");
        std::vector<Matrix> head_grads{res.dlogits, Matrix(idx.size(), 1)};
        head_grads[1].data = res.dv_pi;
        policy_.zero_grads();
        policy_net_->backward(policy_.params, cache, head_grads, policy_.grads);
        clip_global_grad_norm(policy_.grads, setup_.dna.grad_clip);
        adam_step(policy_, distil_adam_, adam_cfg);
        ++stats.updates;
        stats.mean_loss += res.loss;
        stats.mean_kl += res.kl_term;
      }
    }
    finalize(stats);
    return stats;
  }

  // Dedicated measurement pass: collect one rollout and probe all three
  // phase losses without applying any updates.
  void probe_once() {
    RolloutBatch batch = collect();
    env_->drain_episodes();
    std::vector<double> value_targets, advantages;
    compute_targets(batch, value_targets, advantages);
    const std::vector<double> norm_adv = normalize_advantages(advantages);
    run_probe("policy", probe_policy_, sigma_policy_,
              [&](std::span<const std::size_t> idx) { return policy_loss_grad(batch, norm_adv, idx); });
    if (setup_.dna.mode == TrainMode::dna_dual) {
      run_probe("value", probe_value_, sigma_value_,
                [&](std::span<const std::size_t> idx) {
                  return value_loss_grad(batch, value_targets, idx);
                });
      run_probe("distil", probe_distil_, sigma_distil_,
                [&](std::span<const std::size_t> idx) { return distil_loss_grad(batch, idx); });
    }
  }

  // One outer iteration: rollout, targets, probes, the three phases.
  void run_iteration() {
    RolloutBatch batch = collect();
    for (const auto& ep : env_->drain_episodes()) {
      if (metrics_) {
        metrics_->event({{"event", "episode"},
                         {"step", interactions_},
                         {"env", ep.env_index},
                         {"return", ep.raw_return},
                         {"length", ep.length}});
        metrics_->scalar(interactions_, "episode.return", ep.raw_return);
        metrics_->scalar(interactions_, "episode.length", ep.length);
      }
      recent_returns_.push_back(ep.raw_return);
      if (recent_returns_.size() > 100) recent_returns_.erase(recent_returns_.begin());
    }

    std::vector<double> value_targets, advantages;
    compute_targets(batch, value_targets, advantages);
    const std::vector<double> norm_adv = normalize_advantages(advantages);
    if (setup_.dna.mode == TrainMode::ppo_joint) joint_value_targets_ = &value_targets;

    run_probe("policy", probe_policy_, sigma_policy_,
              [&](std::span<const std::size_t> idx) { return policy_loss_grad(batch, norm_adv, idx); });
    const PhaseStats policy_stats = policy_phase(batch, norm_adv);

    PhaseStats value_stats;
    if (setup_.dna.mode == TrainMode::dna_dual) {
      run_probe("value", probe_value_, sigma_value_,
                [&](std::span<const std::size_t> idx) {
                  return value_loss_grad(batch, value_targets, idx);
                });
      value_stats = value_phase(batch, value_targets);
    }

    PhaseStats distil_stats;
    if (setup_.dna.mode == TrainMode::dna_dual) {
      // pi_old is refreshed inside distill_phase, immediately before the
      // distillation epochs; the probe sees the post-snapshot loss.
      run_probe("distil", probe_distil_, sigma_distil_,
                [&](std::span<const std::size_t> idx) { return distil_loss_grad(batch, idx); });
    }
    distil_stats = distill_phase(batch);
    joint_value_targets_ = nullptr;

    ++iteration_;
    if (metrics_) {
      metrics_->scalar(interactions_, "loss.policy", policy_stats.mean_loss);
      metrics_->scalar(interactions_, "policy.entropy", policy_stats.mean_entropy);
      metrics_->scalar(interactions_, "policy.clip_fraction", policy_stats.clip_fraction);
      if (setup_.dna.mode == TrainMode::dna_dual) {
        metrics_->scalar(interactions_, "loss.value", value_stats.mean_loss);
        metrics_->scalar(interactions_, "loss.distil", distil_stats.mean_loss);
        metrics_->scalar(interactions_, "distil.kl", distil_stats.mean_kl);
      }
    }
  }

  void train() {
    const long long n_outer = outer_iterations();
    while (iteration_ < n_outer) {
      run_iteration();
      if (setup_.eval_interval > 0 && iteration_ % setup_.eval_interval == 0)
        log_eval(evaluate(setup_.eval_episodes));
      if (!setup_.out_dir.empty() && setup_.checkpoint_interval > 0 &&
          iteration_ % setup_.checkpoint_interval == 0)
        save_state(std::filesystem::path(setup_.out_dir) /
                   ("checkpoint_iter" + std::to_string(iteration_) + ".bin"));
    }
    log_eval(evaluate(setup_.eval_episodes));
    if (!setup_.out_dir.empty())
      save_state(std::filesystem::path(setup_.out_dir) / "checkpoint.bin");
    if (metrics_) metrics_->flush();
  }

  // Mean raw episode return (and its gamma-discounted counterpart) over
  // n_episodes fresh episodes on a frozen copy of the training env.
  EvalResult evaluate(int n_episodes, bool greedy = false, std::uint64_t seed_salt = 0) {
    if (n_episodes <= 0) return {};
    const std::size_t n_envs = std::min<std::size_t>(8, static_cast<std::size_t>(n_episodes));
    auto eval_env = env_->clone_frozen(n_envs, rng_eval_root_.spawn(seed_salt));
    Rng sample_rng = rng_eval_root_.spawn(seed_salt + 1);

    std::vector<double> disc_accum(n_envs, 0.0);
    std::vector<double> disc_pow(n_envs, 1.0);
    EvalResult result;
    Matrix logits;
    while (result.episodes < n_episodes) {
      const Matrix& obs = eval_env->current_obs();
      policy_logits(obs, logits);
      for (std::size_t i = 0; i < n_envs && result.episodes < n_episodes; ++i) {
        const int action = greedy ? argmax_action(logits.row(i))
                                  : sample_action(logits.row(i), sample_rng).first;
        auto outcome = eval_env->step_env(i, action);
        disc_accum[i] += disc_pow[i] * outcome.raw_reward;
        disc_pow[i] *= setup_.dna.gamma;
        if (outcome.terminal) {
          result.mean_discounted_return += disc_accum[i];
          disc_accum[i] = 0.0;
          disc_pow[i] = 1.0;
          ++result.episodes;
        }
      }
      for (const auto& ep : eval_env->drain_episodes()) {
        result.mean_return += ep.raw_return;
        result.mean_length += ep.length;
      }
    }
    result.mean_return /= result.episodes;
    result.mean_discounted_return /= result.episodes;
    result.mean_length /= result.episodes;
    return result;
  }

  double mean_recent_return() const {
    if (recent_returns_.empty()) return 0.0;
    double acc = 0.0;
    for (double r : recent_returns_) acc += r;
    return acc / static_cast<double>(recent_returns_.size());
  }

  void save_state(const std::filesystem::path& path) const {
    TrainerCheckpoint ckpt;
    ckpt.iteration = iteration_;
    ckpt.interactions = interactions_;
    ckpt.policy = policy_;
    ckpt.value = value_;
    ckpt.distil_adam = distil_adam_;
    ckpt.pi_old = pi_old_;
    ckpt.obs_stats = env_->obs_normalizer().stats();
    ckpt.reward_stats = env_->reward_normalizer().stats();
    ckpt.reward_accumulators = env_->reward_normalizer().accumulators();
    ckpt.probe_policy = probe_policy_;
    ckpt.probe_value = probe_value_;
    ckpt.probe_distil = probe_distil_;
    ckpt.rng_collect = rng_collect_;
    ckpt.rng_shuffle = rng_shuffle_;
    ckpt.rng_probe = rng_probe_;
    ckpt.rng_env_root = rng_env_root_;
    save_checkpoint(path, ckpt);
  }

  // Restores trainer state from a checkpoint. Environment episodes restart;
  // normalizer statistics, parameters, optimizer moments, probe EMAs, and
  // RNG streams continue from the checkpoint.
  void load_state(const std::filesystem::path& path) {
    TrainerCheckpoint ckpt = load_checkpoint(path);
    if (ckpt.policy.params.size() != policy_.params.size())
      throw std::runtime_error("checkpoint: policy parameter count mismatch");
    if (setup_.dna.mode == TrainMode::dna_dual &&
        ckpt.value.params.size() != value_.params.size())
      throw std::runtime_error("checkpoint: value parameter count mismatch");
    iteration_ = ckpt.iteration;
    interactions_ = ckpt.interactions;
    policy_ = std::move(ckpt.policy);
    value_ = std::move(ckpt.value);
    distil_adam_ = std::move(ckpt.distil_adam);
    pi_old_ = std::move(ckpt.pi_old);
    env_->obs_normalizer().stats().restore(ckpt.obs_stats.count(), ckpt.obs_stats.raw_mean(),
                                           ckpt.obs_stats.raw_m2());
    env_->reward_normalizer().stats().restore(ckpt.reward_stats.count(),
                                              ckpt.reward_stats.raw_mean(),
                                              ckpt.reward_stats.raw_m2());
    if (ckpt.reward_accumulators.size() == env_->reward_normalizer().accumulators().size())
      env_->reward_normalizer().accumulators() = ckpt.reward_accumulators;
    probe_policy_ = ckpt.probe_policy;
    probe_value_ = ckpt.probe_value;
    probe_distil_ = ckpt.probe_distil;
    rng_collect_ = ckpt.rng_collect;
    rng_shuffle_ = ckpt.rng_shuffle;
    rng_probe_ = ckpt.rng_probe;
    env_->reset_all();
  }

  void policy_logits(const Matrix& obs, Matrix& logits) {
    std::vector<Matrix> heads;
    policy_net_->forward(policy_.params, obs, heads);
    logits = std::move(heads[0]);
  }

  void value_estimates(const Matrix& obs, std::vector<double>& values) {
    std::vector<Matrix> heads;
    if (setup_.dna.mode == TrainMode::dna_dual) {
      value_net_->forward(value_.params, obs, heads);
      values = std::move(heads[0].data);
    } else {
      policy_net_->forward(policy_.params, obs, heads);
      values = std::move(heads[1].data);
    }
  }

 private:
  AdamConfig adam_config() const {
    AdamConfig cfg;
    cfg.lr = setup_.dna.lr * anneal_factor();
    return cfg;
  }

  double effective_entropy_coef() const {
    return setup_.dna.entropy_coef * (setup_.dna.anneal_lr ? anneal_factor() : 1.0);
  }

  double anneal_factor() const {
    if (!setup_.dna.anneal_lr) return 1.0;
    const double progress =
        static_cast<double>(interactions_) / static_cast<double>(setup_.dna.total_interactions);
    return std::max(0.0, 1.0 - progress);
  }

  void finalize(PhaseStats& stats) const {
    if (stats.updates == 0) return;
    const double inv = 1.0 / static_cast<double>(stats.updates);
    stats.mean_loss *= inv;
    stats.mean_entropy *= inv;
    stats.clip_fraction *= inv;
    stats.mean_kl *= inv;
  }

  void check_finite(double loss, const char* phase) {
    if (std::isfinite(loss)) return;
    if (!setup_.out_dir.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(setup_.out_dir, ec);
      save_state(std::filesystem::path(setup_.out_dir) / "checkpoint_diverged.bin");
    }
    if (metrics_) {
      metrics_->event({{"event", "diverged"}, {"phase", phase}, {"step", interactions_}});
      metrics_->flush();
    }
    throw TrainingDiverged(std::string("non-finite loss in ") + phase + " phase at step " +
                           std::to_string(interactions_));
  }

  // Dedicated probe pass: paired gradients on the phase's own loss over the
  // rollout data, no parameter updates.
  template <typename GradFn>
  void run_probe(const char* phase, NoiseScaleProbe& probe, double& sigma_out, GradFn&& fn) {
    if (!probes_usable_) return;
    const std::size_t samples = setup_.dna.agents * setup_.dna.horizon;
    auto [g_small, g_big] =
        paired_gradient_probe(fn, samples, probe.b_small, probe.b_big, rng_probe_);
    const auto [g2_hat, s_hat] = estimate_g2_s(g_small, g_big, probe.b_small, probe.b_big);
    const NoiseScaleReading reading = update_and_read(probe, g2_hat, s_hat);
    if (reading.valid) sigma_out = reading.sigma;
    if (metrics_) {
      metrics_->event({{"event", "noise_scale"},
                       {"step", interactions_},
                       {"phase", phase},
                       {"g2_hat", g2_hat},
                       {"s_hat", s_hat},
                       {"ema_g2", reading.ema_g2},
                       {"ema_s", reading.ema_s},
                       {"b_simple", reading.valid ? reading.b_simple : 0.0},
                       {"sigma", reading.sigma},
                       {"valid", reading.valid}});
      metrics_->scalar(interactions_, std::string("noise.") + phase + ".sigma", reading.sigma);
    }
  }

  std::vector<double> policy_loss_grad(const RolloutBatch& batch,
                                       const std::vector<double>& norm_adv,
                                       std::span<const std::size_t> idx) {
    const ClipConfig clip_cfg{setup_.dna.epsilon, effective_entropy_coef()};
    const Matrix obs = gather_rows(batch.obs, idx);
    std::vector<Matrix> heads;
    Mlp::Cache cache;
    policy_net_->forward(policy_.params, obs, heads, &cache);
    auto res = clip_surrogate_loss(heads[0], gather(batch.actions, idx),
                                   gather(batch.behavior_log_probs, idx),
                                   gather(norm_adv, idx), clip_cfg);
    std::vector<Matrix> head_grads{res.dlogits, Matrix(idx.size(), 1)};
    std::vector<double> grads(policy_net_->param_count(), 0.0);
    policy_net_->backward(policy_.params, cache, head_grads, grads);
    return grads;
  }

  std::vector<double> value_loss_grad(const RolloutBatch& batch,
                                      const std::vector<double>& value_targets,
                                      std::span<const std::size_t> idx) {
    const Matrix obs = gather_rows(batch.obs, idx);
    std::vector<Matrix> heads;
    Mlp::Cache cache;
    value_net_->forward(value_.params, obs, heads, &cache);
    auto res = value_mse_loss(heads[0].data, gather(value_targets, idx));
    std::vector<Matrix> head_grads{Matrix(idx.size(), 1)};
    head_grads[0].data = res.dpred;
    std::vector<double> grads(value_net_->param_count(), 0.0);
    value_net_->backward(value_.params, cache, head_grads, grads);
    return grads;
  }

  std::vector<double> distil_loss_grad(const RolloutBatch& batch,
                                       std::span<const std::size_t> idx) {
    const DistilConfig distil_cfg{setup_.dna.beta};
    const Matrix obs = gather_rows(batch.obs, idx);
    std::vector<double> targets;
    value_estimates(obs, targets);
    std::vector<Matrix> heads;
    Mlp::Cache cache;
    policy_net_->forward(policy_.params, obs, heads, &cache);
    // The snapshot equals the live policy at probe time, so old logits are
    // the current forward outputs.
    auto res = distillation_loss(heads[1].data, targets, heads[0], heads[0], distil_cfg);
    std::vector<Matrix> head_grads{res.dlogits, Matrix(idx.size(), 1)};
    head_grads[1].data = res.dv_pi;
    std::vector<double> grads(policy_net_->param_count(), 0.0);
    policy_net_->backward(policy_.params, cache, head_grads, grads);
    return grads;
  }

  void log_eval(const EvalResult& result) {
    if (!metrics_) return;
    metrics_->event({{"event", "eval"},
                     {"step", interactions_},
                     {"mean_return", result.mean_return},
                     {"mean_discounted_return", result.mean_discounted_return},
                     {"mean_length", result.mean_length},
                     {"episodes", result.episodes}});
    metrics_->scalar(interactions_, "eval.mean_return", result.mean_return);
    metrics_->scalar(interactions_, "eval.mean_discounted_return",
                     result.mean_discounted_return);
  }

  TrainSetup setup_;
  MetricsWriter* metrics_ = nullptr;

  Rng root_{0};
  Rng rng_env_root_{0};
  Rng rng_collect_{0};
  Rng rng_shuffle_{0};
  Rng rng_probe_{0};
  Rng rng_eval_root_{0};

  std::unique_ptr<VecEnv> env_;
  std::unique_ptr<Mlp> policy_net_;
  std::unique_ptr<Mlp> value_net_;
  ParameterBlock policy_;
  ParameterBlock value_;
  AdamState distil_adam_;
  std::vector<double> pi_old_;

  NoiseScaleProbe probe_policy_, probe_value_, probe_distil_;
  std::size_t probe_b_big_ = 0;
  bool probes_usable_ = false;
  double sigma_policy_ = 0.0, sigma_value_ = 0.0, sigma_distil_ = 0.0;

  long long interactions_ = 0;
  long long iteration_ = 0;
  std::vector<double> recent_returns_;
  const std::vector<double>* joint_value_targets_ = nullptr;
};

}  // namespace dna
