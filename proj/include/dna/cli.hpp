#pragma once

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dna/config.hpp"
#include "dna/experiments.hpp"
#include "dna/metrics.hpp"
#include "dna/trainer.hpp"

namespace dna {

// Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime
// fault.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitConfig = 2, kExitRuntime = 3 };

namespace cli_detail {

struct GlobalFlags {
  std::string config_path;
  std::string out_dir;
  long long seed = -1;  // -1 keeps the config seed
  bool deterministic = false;
};

inline void add_global_flags(CLI::App* cmd, GlobalFlags& flags, bool config_required = true) {
  auto* opt = cmd->add_option("--config", flags.config_path, "key = value config file");
  if (config_required) opt->required();
  cmd->add_option("--seed", flags.seed, "override the config seed");
  cmd->add_option("--out-dir", flags.out_dir, "output directory");
  cmd->add_flag("--deterministic", flags.deterministic,
                "single-threaded mode (also disables worker pools)");
}

inline ConfigMap load_config(const GlobalFlags& flags) {
  if (flags.config_path.empty()) return ConfigMap::parse_string("");
  if (!std::filesystem::exists(flags.config_path))
    throw ConfigError("config: file not found: " + flags.config_path);
  return ConfigMap::parse_file(flags.config_path);
}

inline std::filesystem::path resolve_out_dir(const GlobalFlags& flags, const std::string& name,
                                             std::uint64_t seed) {
  if (!flags.out_dir.empty()) return flags.out_dir;
  return std::filesystem::path("runs") / (name + "_seed" + std::to_string(seed));
}

inline RunManifest make_manifest(const std::string& experiment, const ConfigMap& cfg,
                                 std::uint64_t seed, std::vector<std::string> outputs) {
  RunManifest manifest;
  manifest.experiment = experiment;
  manifest.config_snapshot = config_snapshot_json(cfg);
  manifest.config_snapshot["resolved_seed"] = seed;
  manifest.seeds = {seed};
  manifest.outputs = std::move(outputs);
  return manifest;
}

inline int cmd_train(const GlobalFlags& flags, const std::string& resume_path) {
  ConfigMap cfg = load_config(flags);
  TrainSetup setup = parse_train_setup(cfg);
  cfg.finish();
  if (flags.seed >= 0) setup.dna.seed = static_cast<std::uint64_t>(flags.seed);

  const std::filesystem::path out = resolve_out_dir(flags, "train", setup.dna.seed);
  setup.out_dir = out.string();
  write_manifest(out, make_manifest("train", cfg, setup.dna.seed,
                                    {"metrics.jsonl", "metrics.csv", "checkpoint.bin"}));
  MetricsWriter metrics(out / "metrics.jsonl", out / "metrics.csv");

  Trainer trainer(setup, &metrics);
  if (!resume_path.empty()) trainer.load_state(resume_path);
  trainer.train();

  const EvalResult eval = trainer.evaluate(setup.eval_episodes);
  nlohmann::json summary{{"interactions", trainer.interactions()},
                         {"iterations", trainer.iteration()},
                         {"eval_mean_return", eval.mean_return},
                         {"eval_mean_discounted_return", eval.mean_discounted_return},
                         {"out_dir", out.string()}};
  std::cout << summary.dump(2) << '\n';
  return kExitOk;
}

inline int cmd_evaluate(const GlobalFlags& flags, const std::string& checkpoint_path,
                        int episodes, bool greedy) {
  ConfigMap cfg = load_config(flags);
  TrainSetup setup = parse_train_setup(cfg);
  cfg.finish();
  if (flags.seed >= 0) setup.dna.seed = static_cast<std::uint64_t>(flags.seed);
  setup.env.warmup = false;  // statistics come from the checkpoint

  Trainer trainer(setup);
  trainer.load_state(checkpoint_path);
  const EvalResult eval = trainer.evaluate(episodes, greedy);
  nlohmann::json summary{{"episodes", eval.episodes},
                         {"mean_return", eval.mean_return},
                         {"mean_discounted_return", eval.mean_discounted_return},
                         {"mean_length", eval.mean_length},
                         {"greedy", greedy}};
  std::cout << summary.dump(2) << '\n';
  return kExitOk;
}

inline int cmd_sweep(const GlobalFlags& flags, bool lambda_sweep) {
  ConfigMap cfg = load_config(flags);
  SweepConfig sweep = parse_sweep_config(cfg);
  cfg.finish();
  if (flags.seed >= 0) sweep.base.dna.seed = static_cast<std::uint64_t>(flags.seed);
  if (flags.deterministic) sweep.n_workers = 1;

  const std::string name = lambda_sweep ? "sweep_lambda" : "sweep_epochs";
  const std::filesystem::path out = resolve_out_dir(flags, name, sweep.base.dna.seed);
  write_manifest(out, make_manifest(name, cfg, sweep.base.dna.seed, {name + ".csv"}));

  const std::vector<SweepRow> rows =
      lambda_sweep ? run_lambda_sweep(sweep) : run_epoch_sweep(sweep);
  write_sweep_csv(out / (name + ".csv"), rows);

  if (lambda_sweep) {
    // Trend summary: sigma_pi against lambda_pi, sigma_v against lambda_v,
    // averaged over seeds per grid point.
    for (const char* param : {"lambda_pi", "lambda_v"}) {
      std::vector<double> lams, sigmas;
      for (double lam : sweep.lambda_grid) {
        std::vector<double> cell;
        for (const auto& row : rows)
          if (row.param == param && row.value == lam)
            cell.push_back(std::string(param) == "lambda_pi" ? row.sigma_pi : row.sigma_v);
        if (!cell.empty()) {
          lams.push_back(lam);
          sigmas.push_back(mean_of(cell));
        }
      }
      std::cout << "spearman(" << param << ", sigma) = "
                << spearman_correlation(lams, sigmas) << '\n';
    }
  }
  std::cout << "wrote " << (out / (name + ".csv")).string() << " (" << rows.size() << " rows)\n";
  return kExitOk;
}

inline int cmd_noise_probe(const GlobalFlags& flags, int rollouts) {
  ConfigMap cfg = load_config(flags);
  TrainSetup setup = parse_train_setup(cfg);
  cfg.finish();
  if (flags.seed >= 0) setup.dna.seed = static_cast<std::uint64_t>(flags.seed);

  const std::filesystem::path out = resolve_out_dir(flags, "noise_probe", setup.dna.seed);
  write_manifest(out, make_manifest("noise_probe", cfg, setup.dna.seed,
                                    {"metrics.jsonl", "metrics.csv"}));
  MetricsWriter metrics(out / "metrics.jsonl", out / "metrics.csv");
  setup.out_dir.clear();

  Trainer trainer(setup, &metrics);
  nlohmann::json report = nlohmann::json::array();
  for (int i = 0; i < rollouts; ++i) {
    trainer.probe_once();
    report.push_back({{"rollout", i},
                      {"sigma_policy", trainer.latest_sigma_policy()},
                      {"sigma_value", trainer.latest_sigma_value()},
                      {"sigma_distil", trainer.latest_sigma_distil()}});
  }
  metrics.flush();
  std::cout << report.dump(2) << '\n';
  return kExitOk;
}

inline int cmd_emit_plots(const GlobalFlags& flags, const std::string& metrics_path,
                          double ema_decay) {
  std::filesystem::path metrics = metrics_path;
  if (std::filesystem::is_directory(metrics)) metrics /= "metrics.jsonl";
  if (!std::filesystem::exists(metrics))
    throw ConfigError("config: metrics file not found: " + metrics.string());

  // Seed column comes from the run manifest when present.
  std::uint64_t seed = flags.seed >= 0 ? static_cast<std::uint64_t>(flags.seed) : 0;
  const std::filesystem::path manifest_path = metrics.parent_path() / "manifest.json";
  if (flags.seed < 0 && std::filesystem::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    nlohmann::json manifest = nlohmann::json::parse(in);
    if (manifest.contains("seeds") && !manifest["seeds"].empty())
      seed = manifest["seeds"][0].get<std::uint64_t>();
  }

  const std::filesystem::path out =
      flags.out_dir.empty() ? metrics.parent_path() / "plots" : std::filesystem::path(flags.out_dir);
  emit_plot_data(metrics, out, seed, ema_decay);
  std::cout << "wrote " << (out / "curves_training.csv").string() << " and "
            << (out / "curves_noise.csv").string() << '\n';
  return kExitOk;
}

}  // namespace cli_detail

inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"DNA: dual-network actor-critic training and measurement harness"};
  app.require_subcommand(1);

  cli_detail::GlobalFlags train_flags, eval_flags, interf_flags, lambda_flags, epoch_flags,
      probe_flags, plots_flags;

  auto* train_cmd = app.add_subcommand("train", "train on a toy control env");
  cli_detail::add_global_flags(train_cmd, train_flags);
  std::string resume_path;
  train_cmd->add_option("--resume", resume_path, "resume from a checkpoint file");

  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  cli_detail::add_global_flags(eval_cmd, eval_flags);
  std::string checkpoint_path;
  int eval_episodes = 100;
  bool greedy = false;
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval_cmd->add_option("--episodes", eval_episodes, "number of evaluation episodes");
  eval_cmd->add_flag("--greedy", greedy, "act greedily instead of sampling");

  auto* interf_cmd = app.add_subcommand("interference", "joint-vs-dual toy regression study");
  cli_detail::add_global_flags(interf_cmd, interf_flags, /*config_required=*/false);
  int interf_seeds = -1;
  interf_cmd->add_option("--seeds", interf_seeds, "override the number of seeds");

  auto* lambda_cmd = app.add_subcommand("sweep-lambda", "lambda_pi / lambda_v sweep");
  cli_detail::add_global_flags(lambda_cmd, lambda_flags);

  auto* epoch_cmd = app.add_subcommand("sweep-epochs", "per-phase epoch sweep");
  cli_detail::add_global_flags(epoch_cmd, epoch_flags);

  auto* probe_cmd = app.add_subcommand("noise-probe", "noise-scale probes without training");
  cli_detail::add_global_flags(probe_cmd, probe_flags);
  int probe_rollouts = 1;
  probe_cmd->add_option("--rollouts", probe_rollouts, "number of probe rollouts");

  auto* plots_cmd = app.add_subcommand("emit-plots", "metrics stream to plot-ready CSV");
  cli_detail::add_global_flags(plots_cmd, plots_flags, /*config_required=*/false);
  std::string metrics_path;
  double ema_decay = 0.0;
  plots_cmd->add_option("--metrics", metrics_path, "metrics.jsonl file or run directory")
      ->required();
  plots_cmd->add_option("--ema", ema_decay, "smoothing decay in [0,1); 0 disables");

  std::vector<const char*> argv;
  argv.push_back("dna");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n' << app.help() << '\n';
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cli_detail::cmd_train(train_flags, resume_path);
    if (eval_cmd->parsed())
      return cli_detail::cmd_evaluate(eval_flags, checkpoint_path, eval_episodes, greedy);
    if (interf_cmd->parsed()) {
      ConfigMap cfg = cli_detail::load_config(interf_flags);
      InterferenceSpec spec = parse_interference_spec(cfg);
      cfg.finish();
      if (interf_seeds > 0) spec.seeds = interf_seeds;
      if (interf_flags.seed >= 0) spec.seed = static_cast<std::uint64_t>(interf_flags.seed);
      if (interf_flags.deterministic) spec.n_workers = 1;
      const std::filesystem::path out =
          cli_detail::resolve_out_dir(interf_flags, "interference", spec.seed);
      RunManifest manifest = cli_detail::make_manifest(
          "interference", cfg, spec.seed, {"interference.csv", "interference_cells.csv"});
      manifest.config_snapshot["resolved_seeds"] = spec.seeds;
      write_manifest(out, manifest);
      const InterferenceResult result = run_interference(spec);
      write_interference_csv(out, result);
      for (const auto& row : result.rows) {
        std::cout << "sigma1=" << row.sigma1 << "  joint_t2=" << row.joint_t2_mse << "+-"
                  << row.joint_t2_se << "  dual_t2=" << row.dual_t2_mse << "+-" << row.dual_t2_se
                  << "  (n=" << row.n_seeds << ", diverged=" << row.diverged << ")\n";
      }
      return kExitOk;
    }
    if (lambda_cmd->parsed()) return cli_detail::cmd_sweep(lambda_flags, true);
    if (epoch_cmd->parsed()) return cli_detail::cmd_sweep(epoch_flags, false);
    if (probe_cmd->parsed()) return cli_detail::cmd_noise_probe(probe_flags, probe_rollouts);
    if (plots_cmd->parsed())
      return cli_detail::cmd_emit_plots(plots_flags, metrics_path, ema_decay);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(std::move(args));
}

}  // namespace dna
