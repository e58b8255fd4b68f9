#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dna/config.hpp"
#include "dna/metrics.hpp"
#include "dna/net.hpp"
#include "dna/optim.hpp"
#include "dna/rng.hpp"
#include "dna/trainer.hpp"

namespace dna {

// ---------------------------------------------------------------------------
// Run manifest

struct RunManifest {
  std::string experiment;
  nlohmann::json config_snapshot;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> outputs;

  std::string config_hash() const {
    // FNV-1a 64 over the canonical snapshot serialization.
    const std::string text = config_snapshot.dump();
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
      hash ^= c;
      hash *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return buf;
  }

  nlohmann::json to_json() const {
    return {{"experiment", experiment},
            {"config", config_snapshot},
            {"seeds", seeds},
            {"config_hash", config_hash()},
            {"outputs", outputs}};
  }
};

// Written before any training output so every result file is reproducible
// from manifest plus code version.
inline void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("manifest: cannot write to " + dir.string());
  out << manifest.to_json().dump(2) << '\n';
}

inline nlohmann::json config_snapshot_json(const ConfigMap& cfg) {
  nlohmann::json snapshot = nlohmann::json::object();
  for (const auto& [key, value] : cfg.entries()) snapshot[key] = value;
  return snapshot;
}

// ---------------------------------------------------------------------------
// Small shared helpers

inline double sample_standard_error(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  if (xs.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= (n - 1.0);
  return std::sqrt(var / n);
}

inline double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

// Tie-aware Spearman rank correlation.
inline double spearman_correlation(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double mean_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = mean_rank;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> rx = ranks(x), ry = ranks(y);
  double mx = mean_of(rx), my = mean_of(ry);
  double cov = 0.0, vx = 0.0, vy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cov += (rx[i] - mx) * (ry[i] - my);
    vx += (rx[i] - mx) * (rx[i] - mx);
    vy += (ry[i] - my) * (ry[i] - my);
  }
  if (vx <= 0.0 || vy <= 0.0) return 0.0;
  return cov / std::sqrt(vx * vy);
}

// Runs `count` jobs across a small worker pool. Each job owns its output
// slot, so scheduling order never affects results. n_workers <= 1 runs
// sequentially.
template <typename Fn>
void parallel_for(std::size_t count, int n_workers, Fn&& fn) {
  if (n_workers <= 0)
    n_workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (n_workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  const int active = std::min<int>(n_workers, static_cast<int>(count));
  for (int w = 0; w < active; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        fn(i);
      }
    });
  }
  for (auto& t : workers) t.join();
}

// ---------------------------------------------------------------------------
// Interference experiment: two independent regression tasks, joint versus
// dual networks.

struct InterferenceSpec {
  std::vector<double> sigma1_grid{0.1, 0.3162, 1.0, 3.162, 10.0, 31.62, 100.0};
  double sigma2 = 1.0;
  int seeds = 20;
  long long train_steps = 1500;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  long long dataset_size = 0;  // 0 draws fresh noisy samples every step
  std::size_t eval_grid_size = 512;
  std::vector<std::size_t> joint_hidden{256, 512};
  std::vector<std::size_t> dual_hidden{256, 256};
  std::uint64_t seed = 0;
  int n_workers = 0;

  void validate() const {
    if (sigma1_grid.empty()) throw std::invalid_argument("interference: empty sigma1 grid");
    for (double s : sigma1_grid)
      if (!(s > 0.0)) throw std::invalid_argument("interference: sigma values must be positive");
    if (!(sigma2 > 0.0)) throw std::invalid_argument("interference: sigma2 must be positive");
    if (seeds < 1) throw std::invalid_argument("interference: seeds >= 1");
    if (train_steps < 0) throw std::invalid_argument("interference: train_steps >= 0");
    if (batch_size == 0) throw std::invalid_argument("interference: batch_size >= 1");
    if (eval_grid_size < 2) throw std::invalid_argument("interference: eval_grid_size >= 2");
  }
};

struct InterferenceCellResult {
  double sigma1 = 0.0;
  std::uint64_t seed = 0;
  double joint_t1 = 0.0, joint_t2 = 0.0;
  double dual_t1 = 0.0, dual_t2 = 0.0;
  bool diverged = false;
};

struct InterferenceRow {
  double sigma1 = 0.0;
  double joint_t1_mse = 0.0, joint_t1_se = 0.0;
  double joint_t2_mse = 0.0, joint_t2_se = 0.0;
  double dual_t1_mse = 0.0, dual_t1_se = 0.0;
  double dual_t2_mse = 0.0, dual_t2_se = 0.0;
  int n_seeds = 0;
  int diverged = 0;
};

namespace detail {

// One (sigma1, seed) cell: trains the joint and the dual model on the same
// noisy sample stream and reports noise-free-target MSE for both tasks.
inline InterferenceCellResult run_interference_cell(const InterferenceSpec& spec, double sigma1,
                                                    int seed_index) {
  InterferenceCellResult cell;
  cell.sigma1 = sigma1;
  cell.seed = spec.seed + static_cast<std::uint64_t>(seed_index);

  const Rng cell_root = Rng(spec.seed).spawn(0x1000 + seed_index);
  Rng init_rng = cell_root.spawn(1);
  Rng data_rng = cell_root.spawn(2);

  NetSpec joint_spec{1, spec.joint_hidden, {{"t1", 1}, {"t2", 1}}, Activation::relu};
  NetSpec single_spec{1, spec.dual_hidden, {{"out", 1}}, Activation::relu};
  Mlp joint_net(joint_spec);
  Mlp dual_net_a(single_spec);
  Mlp dual_net_b(single_spec);

  ParameterBlock joint, dual_a, dual_b;
  joint.resize(joint_net.param_count());
  dual_a.resize(dual_net_a.param_count());
  dual_b.resize(dual_net_b.param_count());
  joint_net.init_params(joint.params, init_rng, InitScheme::orthogonal);
  dual_net_a.init_params(dual_a.params, init_rng, InitScheme::orthogonal);
  dual_net_b.init_params(dual_b.params, init_rng, InitScheme::orthogonal);

  const AdamConfig adam_cfg{spec.lr, 0.9, 0.999, 1e-8};
  const std::size_t batch = spec.batch_size;

  // Optional fixed dataset, shared by both models.
  std::vector<double> ds_x, ds_y1, ds_y2;
  if (spec.dataset_size > 0) {
    ds_x.resize(spec.dataset_size);
    ds_y1.resize(spec.dataset_size);
    ds_y2.resize(spec.dataset_size);
    for (long long i = 0; i < spec.dataset_size; ++i) {
      ds_x[i] = data_rng.uniform(-std::numbers::pi, std::numbers::pi);
      ds_y1[i] = std::sin(5.0 * ds_x[i]) + sigma1 * data_rng.normal();
      ds_y2[i] = std::cos(5.0 * ds_x[i]) + spec.sigma2 * data_rng.normal();
    }
  }

  Matrix x(batch, 1);
  std::vector<double> y1(batch), y2(batch);
  std::vector<Matrix> heads;
  Mlp::Cache cache;

  for (long long step = 0; step < spec.train_steps; ++step) {
    if (spec.dataset_size > 0) {
      for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t k =
            static_cast<std::size_t>(data_rng.below(static_cast<std::uint64_t>(spec.dataset_size)));
        x(i, 0) = ds_x[k];
        y1[i] = ds_y1[k];
        y2[i] = ds_y2[k];
      }
    } else {
      for (std::size_t i = 0; i < batch; ++i) {
        x(i, 0) = data_rng.uniform(-std::numbers::pi, std::numbers::pi);
        y1[i] = std::sin(5.0 * x(i, 0)) + sigma1 * data_rng.normal();
        y2[i] = std::cos(5.0 * x(i, 0)) + spec.sigma2 * data_rng.normal();
      }
    }

    // Joint model: L = MSE(t1) + MSE(t2) through the shared trunk.
    joint_net.forward(joint.params, x, heads, &cache);
    auto l1 = value_mse_loss(heads[0].data, y1);
    auto l2 = value_mse_loss(heads[1].data, y2);
    std::vector<Matrix> joint_grads{Matrix(batch, 1), Matrix(batch, 1)};
    joint_grads[0].data = l1.dpred;
    joint_grads[1].data = l2.dpred;
    joint.zero_grads();
    joint_net.backward(joint.params, cache, joint_grads, joint.grads);
    adam_step(joint, adam_cfg);

    // Dual model: independent networks, one per task.
    dual_net_a.forward(dual_a.params, x, heads, &cache);
    auto la = value_mse_loss(heads[0].data, y1);
    std::vector<Matrix> ga{Matrix(batch, 1)};
    ga[0].data = la.dpred;
    dual_a.zero_grads();
    dual_net_a.backward(dual_a.params, cache, ga, dual_a.grads);
    adam_step(dual_a, adam_cfg);

    dual_net_b.forward(dual_b.params, x, heads, &cache);
    auto lb = value_mse_loss(heads[0].data, y2);
    std::vector<Matrix> gb{Matrix(batch, 1)};
    gb[0].data = lb.dpred;
    dual_b.zero_grads();
    dual_net_b.backward(dual_b.params, cache, gb, dual_b.grads);
    adam_step(dual_b, adam_cfg);
  }

  // Noise-free evaluation grid.
  Matrix grid(spec.eval_grid_size, 1);
  std::vector<double> truth1(spec.eval_grid_size), truth2(spec.eval_grid_size);
  for (std::size_t i = 0; i < spec.eval_grid_size; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(spec.eval_grid_size - 1);
    grid(i, 0) = -std::numbers::pi + 2.0 * std::numbers::pi * t;
    truth1[i] = std::sin(5.0 * grid(i, 0));
    truth2[i] = std::cos(5.0 * grid(i, 0));
  }
  joint_net.forward(joint.params, grid, heads);
  cell.joint_t1 = value_mse_loss(heads[0].data, truth1).loss;
  cell.joint_t2 = value_mse_loss(heads[1].data, truth2).loss;
  dual_net_a.forward(dual_a.params, grid, heads);
  cell.dual_t1 = value_mse_loss(heads[0].data, truth1).loss;
  dual_net_b.forward(dual_b.params, grid, heads);
  cell.dual_t2 = value_mse_loss(heads[0].data, truth2).loss;

  cell.diverged = !std::isfinite(cell.joint_t1) || !std::isfinite(cell.joint_t2) ||
                  !std::isfinite(cell.dual_t1) || !std::isfinite(cell.dual_t2);
  return cell;
}

}  // namespace detail

struct InterferenceResult {
  std::vector<InterferenceRow> rows;
  std::vector<InterferenceCellResult> cells;
};

inline InterferenceResult run_interference(const InterferenceSpec& spec) {
  spec.validate();
  const std::size_t n_cells = spec.sigma1_grid.size() * static_cast<std::size_t>(spec.seeds);
  InterferenceResult result;
  result.cells.resize(n_cells);

  parallel_for(n_cells, spec.n_workers, [&](std::size_t job) {
    const std::size_t sigma_idx = job / spec.seeds;
    const int seed_idx = static_cast<int>(job % spec.seeds);
    result.cells[job] =
        detail::run_interference_cell(spec, spec.sigma1_grid[sigma_idx], seed_idx);
  });

  for (std::size_t s = 0; s < spec.sigma1_grid.size(); ++s) {
    InterferenceRow row;
    row.sigma1 = spec.sigma1_grid[s];
    std::vector<double> jt1, jt2, dt1, dt2;
    for (int k = 0; k < spec.seeds; ++k) {
      const auto& cell = result.cells[s * spec.seeds + k];
      if (cell.diverged) {
        ++row.diverged;
        continue;
      }
      jt1.push_back(cell.joint_t1);
      jt2.push_back(cell.joint_t2);
      dt1.push_back(cell.dual_t1);
      dt2.push_back(cell.dual_t2);
    }
    row.n_seeds = static_cast<int>(jt1.size());
    row.joint_t1_mse = mean_of(jt1);
    row.joint_t1_se = sample_standard_error(jt1);
    row.joint_t2_mse = mean_of(jt2);
    row.joint_t2_se = sample_standard_error(jt2);
    row.dual_t1_mse = mean_of(dt1);
    row.dual_t1_se = sample_standard_error(dt1);
    row.dual_t2_mse = mean_of(dt2);
    row.dual_t2_se = sample_standard_error(dt2);
    result.rows.push_back(row);
  }
  return result;
}

inline void write_interference_csv(const std::filesystem::path& dir,
                                   const InterferenceResult& result) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "interference.csv", std::ios::trunc);
    out << "sigma1,joint_t1_mse,joint_t1_se,joint_t2_mse,joint_t2_se,"
           "dual_t1_mse,dual_t1_se,dual_t2_mse,dual_t2_se,n_seeds,diverged\n";
    for (const auto& row : result.rows) {
      out << nlohmann::json(row.sigma1).dump() << ',' << nlohmann::json(row.joint_t1_mse).dump()
          << ',' << nlohmann::json(row.joint_t1_se).dump() << ','
          << nlohmann::json(row.joint_t2_mse).dump() << ','
          << nlohmann::json(row.joint_t2_se).dump() << ','
          << nlohmann::json(row.dual_t1_mse).dump() << ','
          << nlohmann::json(row.dual_t1_se).dump() << ','
          << nlohmann::json(row.dual_t2_mse).dump() << ','
          << nlohmann::json(row.dual_t2_se).dump() << ',' << row.n_seeds << ',' << row.diverged
          << '\n';
    }
  }
  {
    std::ofstream out(dir / "interference_cells.csv", std::ios::trunc);
    out << "sigma1,seed,joint_t1,joint_t2,dual_t1,dual_t2,diverged\n";
    for (const auto& cell : result.cells) {
      out << nlohmann::json(cell.sigma1).dump() << ',' << cell.seed << ','
          << nlohmann::json(cell.joint_t1).dump() << ',' << nlohmann::json(cell.joint_t2).dump()
          << ',' << nlohmann::json(cell.dual_t1).dump() << ','
          << nlohmann::json(cell.dual_t2).dump() << ',' << (cell.diverged ? 1 : 0) << '\n';
    }
  }
}

inline InterferenceSpec parse_interference_spec(ConfigMap& cfg) {
  InterferenceSpec spec;
  spec.sigma1_grid = cfg.get_double_list("sigma1_grid", spec.sigma1_grid);
  spec.sigma2 = cfg.get_double("sigma2", spec.sigma2);
  spec.seeds = static_cast<int>(cfg.get_int("seeds", spec.seeds));
  spec.train_steps = cfg.get_int("train_steps", spec.train_steps);
  spec.batch_size = cfg.get_size("batch_size", spec.batch_size);
  spec.lr = cfg.get_double("lr", spec.lr);
  spec.dataset_size = cfg.get_int("dataset_size", spec.dataset_size);
  spec.eval_grid_size = cfg.get_size("eval_grid_size", spec.eval_grid_size);
  spec.joint_hidden = cfg.get_size_list("joint_hidden", spec.joint_hidden);
  spec.dual_hidden = cfg.get_size_list("dual_hidden", spec.dual_hidden);
  spec.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  spec.n_workers = static_cast<int>(cfg.get_int("n_workers", spec.n_workers));
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Hyperparameter sweeps on the toy control envs

struct SweepConfig {
  TrainSetup base;
  std::vector<double> lambda_grid{0.6, 0.8, 0.9, 0.95, 0.975};
  std::vector<int> policy_epoch_grid{1, 2, 3, 4};
  std::vector<int> value_epoch_grid{1, 2, 3, 4};
  std::vector<int> distil_epoch_grid{0, 1, 2, 3, 4};
  int seeds = 3;
  int n_workers = 0;
};

struct SweepRow {
  std::string param;
  double value = 0.0;
  std::uint64_t seed = 0;
  double eval_return = 0.0;
  double eval_discounted = 0.0;
  double sigma_pi = 0.0;
  double sigma_v = 0.0;
  double sigma_d = 0.0;
  long long interactions = 0;
};

namespace detail {

inline SweepRow run_sweep_cell(const TrainSetup& setup, const std::string& param, double value,
                               int seed_index) {
  TrainSetup cell = setup;
  cell.out_dir.clear();
  cell.eval_interval = 0;
  cell.checkpoint_interval = 0;
  cell.dna.seed = setup.dna.seed + 7919ULL * static_cast<std::uint64_t>(seed_index);
  if (param == "lambda_pi") cell.dna.lambda_pi = value;
  else if (param == "lambda_v") cell.dna.lambda_v = value;
  else if (param == "both_lambda") { cell.dna.lambda_pi = value; cell.dna.lambda_v = value; }
  else if (param == "epochs_policy") cell.dna.epochs_policy = static_cast<int>(value);
  else if (param == "epochs_value") cell.dna.epochs_value = static_cast<int>(value);
  else if (param == "epochs_distil") cell.dna.epochs_distil = static_cast<int>(value);
  else throw std::invalid_argument("sweep: unknown parameter " + param);

  SweepRow row;
  row.param = param;
  row.value = value;
  row.seed = cell.dna.seed;
  Trainer trainer(cell);
  const long long n_outer = trainer.outer_iterations();
  while (trainer.iteration() < n_outer) trainer.run_iteration();
  const EvalResult eval = trainer.evaluate(cell.eval_episodes);
  row.eval_return = eval.mean_return;
  row.eval_discounted = eval.mean_discounted_return;
  row.sigma_pi = trainer.latest_sigma_policy();
  row.sigma_v = trainer.latest_sigma_value();
  row.sigma_d = trainer.latest_sigma_distil();
  row.interactions = trainer.interactions();
  return row;
}

inline std::vector<SweepRow> run_sweep_cells(
    const SweepConfig& cfg, const std::vector<std::pair<std::string, double>>& cells) {
  std::vector<SweepRow> rows(cells.size() * static_cast<std::size_t>(cfg.seeds));
  parallel_for(rows.size(), cfg.n_workers, [&](std::size_t job) {
    const std::size_t cell_idx = job / cfg.seeds;
    const int seed_idx = static_cast<int>(job % cfg.seeds);
    rows[job] =
        run_sweep_cell(cfg.base, cells[cell_idx].first, cells[cell_idx].second, seed_idx);
  });
  return rows;
}

}  // namespace detail

// Lambda sweep mirroring the tuning procedure: sweep lambda_pi holding
// lambda_v at the base value, sweep lambda_v holding lambda_pi at the base
// value, plus homogeneous cells at 0.8 and 0.95 for the comparison against
// the non-homogeneous default.
inline std::vector<SweepRow> run_lambda_sweep(const SweepConfig& cfg) {
  std::vector<std::pair<std::string, double>> cells;
  for (double lam : cfg.lambda_grid) cells.emplace_back("lambda_pi", lam);
  for (double lam : cfg.lambda_grid) cells.emplace_back("lambda_v", lam);
  cells.emplace_back("both_lambda", 0.8);
  cells.emplace_back("both_lambda", 0.95);
  return detail::run_sweep_cells(cfg, cells);
}

// One-at-a-time epoch sweep holding the other two phase counts at 2.
inline std::vector<SweepRow> run_epoch_sweep(const SweepConfig& cfg) {
  SweepConfig held = cfg;
  held.base.dna.epochs_policy = 2;
  held.base.dna.epochs_value = 2;
  held.base.dna.epochs_distil = 2;
  std::vector<std::pair<std::string, double>> cells;
  for (int e : cfg.policy_epoch_grid) cells.emplace_back("epochs_policy", e);
  for (int e : cfg.value_epoch_grid) cells.emplace_back("epochs_value", e);
  for (int e : cfg.distil_epoch_grid) cells.emplace_back("epochs_distil", e);
  return detail::run_sweep_cells(held, cells);
}

inline void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << "param,value,seed,eval_return,eval_discounted,sigma_pi,sigma_v,sigma_d,interactions\n";
  for (const auto& row : rows) {
    out << row.param << ',' << nlohmann::json(row.value).dump() << ',' << row.seed << ','
        << nlohmann::json(row.eval_return).dump() << ','
        << nlohmann::json(row.eval_discounted).dump() << ','
        << nlohmann::json(row.sigma_pi).dump() << ',' << nlohmann::json(row.sigma_v).dump() << ','
        << nlohmann::json(row.sigma_d).dump() << ',' << row.interactions << '\n';
  }
}

inline SweepConfig parse_sweep_config(ConfigMap& cfg) {
  SweepConfig sweep;
  sweep.base = parse_train_setup(cfg);
  sweep.lambda_grid = cfg.get_double_list("lambda_grid", sweep.lambda_grid);
  sweep.policy_epoch_grid = cfg.get_int_list("policy_epoch_grid", sweep.policy_epoch_grid);
  sweep.value_epoch_grid = cfg.get_int_list("value_epoch_grid", sweep.value_epoch_grid);
  sweep.distil_epoch_grid = cfg.get_int_list("distil_epoch_grid", sweep.distil_epoch_grid);
  sweep.seeds = static_cast<int>(cfg.get_int("sweep_seeds", sweep.seeds));
  sweep.n_workers = static_cast<int>(cfg.get_int("n_workers", sweep.n_workers));
  if (sweep.seeds < 1) throw ConfigError("config: sweep_seeds must be >= 1");
  return sweep;
}

// ---------------------------------------------------------------------------
// Plot-data emission: metrics stream -> per-family CSV files

// Rewrites scalar metric events as flat CSV rows with an optional EMA
// smoothing column. Noise metrics go to curves_noise.csv, everything else to
// curves_training.csv. Re-running on the same inputs yields byte-identical
// files.
inline void emit_plot_data(const std::filesystem::path& metrics_jsonl,
                           const std::filesystem::path& out_dir, std::uint64_t seed,
                           double ema_decay = 0.0) {
  if (!(ema_decay >= 0.0 && ema_decay < 1.0))
    throw std::invalid_argument("emit_plot_data: ema_decay must be in [0, 1)");
  std::ifstream in(metrics_jsonl);
  if (!in) throw std::runtime_error("emit_plot_data: cannot open " + metrics_jsonl.string());

  struct Row {
    long long step;
    std::string metric;
    double value;
    double smoothed;
  };
  std::vector<Row> rows;
  std::map<std::string, double> ema;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json obj = nlohmann::json::parse(line);
    if (obj.value("event", "") != "scalar") continue;
    Row row;
    row.step = obj.at("step").get<long long>();
    row.metric = obj.at("metric").get<std::string>();
    row.value = obj.at("value").get<double>();
    auto it = ema.find(row.metric);
    if (it == ema.end()) {
      ema[row.metric] = row.value;
      row.smoothed = row.value;
    } else {
      it->second = ema_decay * it->second + (1.0 - ema_decay) * row.value;
      row.smoothed = it->second;
    }
    rows.push_back(std::move(row));
  }

  std::filesystem::create_directories(out_dir);
  std::ofstream training(out_dir / "curves_training.csv", std::ios::trunc);
  std::ofstream noise(out_dir / "curves_noise.csv", std::ios::trunc);
  training << "step,metric,value,seed,smoothed\n";
  noise << "step,metric,value,seed,smoothed\n";
  for (const auto& row : rows) {
    std::ofstream& out = row.metric.rfind("noise.", 0) == 0 ? noise : training;
    out << row.step << ',' << row.metric << ',' << nlohmann::json(row.value).dump() << ','
        << seed << ',' << nlohmann::json(row.smoothed).dump() << '\n';
  }
}

}  // namespace dna
