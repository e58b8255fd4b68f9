#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dna/cli.hpp"
#include "dna/config.hpp"
#include "dna/experiments.hpp"

namespace fs = std::filesystem;
using dna::ConfigMap;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

dna::InterferenceSpec tiny_interference() {
  dna::InterferenceSpec spec;
  spec.sigma1_grid = {0.1, 10.0};
  spec.seeds = 2;
  spec.train_steps = 40;
  spec.batch_size = 16;
  spec.eval_grid_size = 64;
  spec.joint_hidden = {16, 24};
  spec.dual_hidden = {16, 16};
  spec.n_workers = 1;
  return spec;
}

std::string tiny_train_config() {
  return "env = gridworld\n"
         "grid_size = 4\n"
         "timeout = 32\n"
         "agents = 4\n"
         "horizon = 16\n"
         "mb_policy = 32\n"
         "mb_value = 16\n"
         "mb_distil = 16\n"
         "total_interactions = 192\n"
         "hidden = 8,8\n"
         "probe_b_small = 8\n"
         "eval_episodes = 2\n";
}

}  // namespace

TEST_CASE("config parsing basics", "[experiments]") {
  ConfigMap cfg = ConfigMap::parse_string(
      "# comment line\n"
      "gamma = 0.99   # trailing comment\n"
      "hidden = 32, 64\n"
      "warmup = false\n"
      "env = cartpole\n");
  CHECK(cfg.get_double("gamma", 0.0) == Catch::Approx(0.99));
  CHECK(cfg.get_size_list("hidden", {}) == std::vector<std::size_t>{32, 64});
  CHECK(cfg.get_bool("warmup", true) == false);
  CHECK(cfg.get_string("env", "") == "cartpole");
  CHECK(cfg.get_double("missing", 1.5) == 1.5);
  CHECK_NOTHROW(cfg.finish());
}

TEST_CASE("config rejects malformed input", "[experiments]") {
  CHECK_THROWS_AS(ConfigMap::parse_string("no equals sign\n"), dna::ConfigError);
  CHECK_THROWS_AS(ConfigMap::parse_string("a = 1\na = 2\n"), dna::ConfigError);

  ConfigMap bad_number = ConfigMap::parse_string("gamma = fast\n");
  CHECK_THROWS_AS(bad_number.get_double("gamma", 0.0), dna::ConfigError);

  ConfigMap bad_bool = ConfigMap::parse_string("warmup = yes\n");
  CHECK_THROWS_AS(bad_bool.get_bool("warmup", false), dna::ConfigError);

  ConfigMap unknown = ConfigMap::parse_string("gammma = 0.9\n");
  CHECK_THROWS_AS(unknown.finish(), dna::ConfigError);
}

TEST_CASE("presets resolve to the documented settings", "[experiments]") {
  {
    ConfigMap cfg = ConfigMap::parse_string("preset = table4\n");
    dna::TrainSetup setup = dna::parse_train_setup(cfg);
    CHECK(setup.dna.epochs_value == 2);
    CHECK(setup.dna.lambda_pi == Catch::Approx(0.95));
    CHECK(setup.dna.lambda_v == Catch::Approx(0.95));
  }
  {
    ConfigMap cfg = ConfigMap::parse_string("preset = ppo_orig\n");
    dna::TrainSetup setup = dna::parse_train_setup(cfg);
    CHECK(setup.dna.mode == dna::TrainMode::ppo_joint);
    CHECK(setup.dna.epsilon == Catch::Approx(0.1));
    CHECK(setup.dna.gamma == Catch::Approx(0.99));
    CHECK(setup.dna.agents == 8);
    CHECK(setup.dna.epochs_policy == 3);
    CHECK(setup.dna.mb_policy == 256);
    CHECK(setup.dna.anneal_lr);
  }
  {
    // Explicit keys override the preset.
    ConfigMap cfg = ConfigMap::parse_string("preset = table4\nepochs_value = 3\n");
    dna::TrainSetup setup = dna::parse_train_setup(cfg);
    CHECK(setup.dna.epochs_value == 3);
  }
  {
    ConfigMap cfg = ConfigMap::parse_string("preset = nope\n");
    CHECK_THROWS_AS(dna::parse_train_setup(cfg), dna::ConfigError);
  }
  {
    // DNA defaults match the fine-tuned main-study values.
    ConfigMap cfg = ConfigMap::parse_string("");
    dna::TrainSetup setup = dna::parse_train_setup(cfg);
    CHECK(setup.dna.epochs_policy == 2);
    CHECK(setup.dna.epochs_value == 1);
    CHECK(setup.dna.epochs_distil == 2);
    CHECK(setup.dna.lambda_pi == Catch::Approx(0.8));
    CHECK(setup.dna.lambda_v == Catch::Approx(0.95));
    CHECK(setup.dna.lr == Catch::Approx(2.5e-4));
    CHECK(setup.dna.mb_policy == 2048);
    CHECK(setup.dna.mb_value == 512);
    CHECK(setup.dna.mb_distil == 512);
    CHECK(setup.dna.grad_clip == Catch::Approx(5.0));
    CHECK(setup.dna.beta == Catch::Approx(1.0));
    CHECK(setup.dna.epsilon == Catch::Approx(0.2));
    CHECK(setup.dna.entropy_coef == Catch::Approx(0.001));
    CHECK(setup.dna.gamma == Catch::Approx(0.999));
    CHECK(setup.dna.horizon == 128);
    CHECK(setup.dna.agents == 128);
  }
}

TEST_CASE("manifest hash is a pure function of the config snapshot", "[experiments]") {
  dna::RunManifest a;
  a.experiment = "train";
  a.config_snapshot = {{"gamma", "0.99"}, {"env", "cartpole"}};
  dna::RunManifest b = a;
  CHECK(a.config_hash() == b.config_hash());
  b.config_snapshot["gamma"] = "0.995";
  CHECK(a.config_hash() != b.config_hash());
  CHECK(a.config_hash().size() == 16);
}

TEST_CASE("interference smoke run produces finite aggregated rows", "[experiments]") {
  auto result = dna::run_interference(tiny_interference());
  REQUIRE(result.rows.size() == 2);
  for (const auto& row : result.rows) {
    CHECK(row.n_seeds == 2);
    CHECK(row.diverged == 0);
    CHECK(std::isfinite(row.joint_t2_mse));
    CHECK(std::isfinite(row.dual_t2_mse));
    CHECK(row.joint_t1_mse >= 0.0);
  }
  // Two seeds, two sigmas, all cells present.
  CHECK(result.cells.size() == 4);
}

TEST_CASE("interference with zero training steps matches the init-MSE oracle", "[experiments]") {
  // Near-zero head init: predictions are ~0, so the MSE against the
  // noise-free target is the grid mean of sin^2 (resp. cos^2).
  dna::InterferenceSpec spec = tiny_interference();
  spec.train_steps = 0;
  spec.sigma1_grid = {1.0};
  spec.eval_grid_size = 512;
  auto result = dna::run_interference(spec);

  double sin2 = 0.0, cos2 = 0.0;
  for (std::size_t i = 0; i < 512; ++i) {
    const double t = static_cast<double>(i) / 511.0;
    const double x = -std::numbers::pi + 2.0 * std::numbers::pi * t;
    sin2 += std::sin(5.0 * x) * std::sin(5.0 * x);
    cos2 += std::cos(5.0 * x) * std::cos(5.0 * x);
  }
  sin2 /= 512.0;
  cos2 /= 512.0;
  CHECK(result.rows[0].joint_t1_mse == Catch::Approx(sin2).margin(0.02));
  CHECK(result.rows[0].joint_t2_mse == Catch::Approx(cos2).margin(0.02));
  CHECK(result.rows[0].dual_t1_mse == Catch::Approx(sin2).margin(0.02));
  CHECK(result.rows[0].dual_t2_mse == Catch::Approx(cos2).margin(0.02));
  CHECK(sin2 == Catch::Approx(0.5).margin(0.01));
}

TEST_CASE("interference is deterministic and worker-count independent", "[experiments]") {
  dna::InterferenceSpec spec = tiny_interference();
  auto sequential = dna::run_interference(spec);
  spec.n_workers = 2;
  auto parallel = dna::run_interference(spec);
  REQUIRE(sequential.cells.size() == parallel.cells.size());
  for (std::size_t i = 0; i < sequential.cells.size(); ++i) {
    CHECK(sequential.cells[i].joint_t2 == parallel.cells[i].joint_t2);
    CHECK(sequential.cells[i].dual_t2 == parallel.cells[i].dual_t2);
  }
}

TEST_CASE("sweep rows are rectangular with identical budgets", "[experiments]") {
  ConfigMap cfg = ConfigMap::parse_string(tiny_train_config());
  dna::SweepConfig sweep;
  sweep.base = dna::parse_train_setup(cfg);
  sweep.lambda_grid = {0.8, 0.95};
  sweep.seeds = 2;
  sweep.n_workers = 1;

  auto rows = dna::run_lambda_sweep(sweep);
  // 2 lambda_pi cells + 2 lambda_v cells + 2 homogeneous cells, 2 seeds each.
  REQUIRE(rows.size() == 12);
  for (const auto& row : rows) {
    CHECK(row.interactions == rows[0].interactions);
    CHECK(std::isfinite(row.eval_return));
  }

  sweep.policy_epoch_grid = {1};
  sweep.value_epoch_grid = {1};
  sweep.distil_epoch_grid = {0, 1};
  auto epoch_rows = dna::run_epoch_sweep(sweep);
  REQUIRE(epoch_rows.size() == 8);
  bool has_distil_zero = false;
  for (const auto& row : epoch_rows)
    if (row.param == "epochs_distil" && row.value == 0.0) has_distil_zero = true;
  CHECK(has_distil_zero);

  const fs::path dir = fresh_dir("dna_sweep_csv");
  dna::write_sweep_csv(dir / "sweep.csv", rows);
  const std::string text = slurp(dir / "sweep.csv");
  CHECK(text.rfind("param,value,seed,", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("spearman correlation basics", "[experiments]") {
  CHECK(dna::spearman_correlation({1, 2, 3, 4}, {10, 20, 30, 40}) == Catch::Approx(1.0));
  CHECK(dna::spearman_correlation({1, 2, 3, 4}, {5, 4, 3, 2}) == Catch::Approx(-1.0));
  // Monotone in ranks even when nonlinear in values.
  CHECK(dna::spearman_correlation({1, 2, 3, 4}, {1, 100, 1000, 1e6}) == Catch::Approx(1.0));
}

TEST_CASE("emit_plot_data smoothing and idempotence", "[experiments]") {
  const fs::path dir = fresh_dir("dna_plots_test");
  {
    std::ofstream out(dir / "metrics.jsonl");
    out << R"({"event":"scalar","step":1,"metric":"loss.policy","value":2.0})" << "\n";
    out << R"({"event":"scalar","step":2,"metric":"loss.policy","value":4.0})" << "\n";
    out << R"({"event":"scalar","step":1,"metric":"noise.policy.sigma","value":7.0})" << "\n";
    out << R"({"event":"episode","step":1,"return":3.0})" << "\n";  // non-scalar: ignored
  }
  dna::emit_plot_data(dir / "metrics.jsonl", dir / "plots", 42, 0.5);
  const std::string training = slurp(dir / "plots" / "curves_training.csv");
  CHECK(training == "step,metric,value,seed,smoothed\n"
                    "1,loss.policy,2.0,42,2.0\n"
                    "2,loss.policy,4.0,42,3.0\n");
  const std::string noise = slurp(dir / "plots" / "curves_noise.csv");
  CHECK(noise == "step,metric,value,seed,smoothed\n"
                 "1,noise.policy.sigma,7.0,42,7.0\n");

  // Zero decay reproduces the raw values; re-running is byte-identical.
  dna::emit_plot_data(dir / "metrics.jsonl", dir / "plots0", 42, 0.0);
  const std::string raw = slurp(dir / "plots0" / "curves_training.csv");
  CHECK(raw.find("2,loss.policy,4.0,42,4.0") != std::string::npos);
  dna::emit_plot_data(dir / "metrics.jsonl", dir / "plots0", 42, 0.0);
  CHECK(slurp(dir / "plots0" / "curves_training.csv") == raw);
  fs::remove_all(dir);
}

TEST_CASE("cli exit codes", "[experiments]") {
  // Unknown flag: usage error.
  CHECK(dna::run_cli({"train", "--nonsense"}) == dna::kExitUsage);
  CHECK(dna::run_cli({"no-such-command"}) == dna::kExitUsage);

  // Missing config: config error, and no partial outputs appear.
  const fs::path dir = fresh_dir("dna_cli_missing");
  const fs::path out = dir / "should_not_exist";
  CHECK(dna::run_cli({"train", "--config", (dir / "absent.cfg").string(), "--out-dir",
                      out.string()}) == dna::kExitConfig);
  CHECK_FALSE(fs::exists(out));

  // Invalid config key: config error with the key named.
  const fs::path bad = dir / "bad.cfg";
  std::ofstream(bad) << "gammma = 0.5\n";
  CHECK(dna::run_cli({"train", "--config", bad.string(), "--out-dir", out.string()}) ==
        dna::kExitConfig);
  CHECK_FALSE(fs::exists(out));
  fs::remove_all(dir);
}

TEST_CASE("cli train is byte-deterministic and resumable", "[experiments]") {
  const fs::path dir = fresh_dir("dna_cli_train");
  const fs::path cfg_path = dir / "tiny.cfg";
  std::ofstream(cfg_path) << tiny_train_config();

  const fs::path out1 = dir / "run1";
  const fs::path out2 = dir / "run2";
  REQUIRE(dna::run_cli({"train", "--config", cfg_path.string(), "--seed", "5", "--out-dir",
                        out1.string()}) == dna::kExitOk);
  REQUIRE(dna::run_cli({"train", "--config", cfg_path.string(), "--seed", "5", "--out-dir",
                        out2.string()}) == dna::kExitOk);

  CHECK(fs::exists(out1 / "manifest.json"));
  CHECK(slurp(out1 / "metrics.jsonl") == slurp(out2 / "metrics.jsonl"));
  CHECK(slurp(out1 / "metrics.csv") == slurp(out2 / "metrics.csv"));
  CHECK(slurp(out1 / "checkpoint.bin") == slurp(out2 / "checkpoint.bin"));

  // Different seed: different stream.
  const fs::path out3 = dir / "run3";
  REQUIRE(dna::run_cli({"train", "--config", cfg_path.string(), "--seed", "6", "--out-dir",
                        out3.string()}) == dna::kExitOk);
  CHECK(slurp(out1 / "metrics.jsonl") != slurp(out3 / "metrics.jsonl"));

  // Evaluate the checkpoint.
  CHECK(dna::run_cli({"evaluate", "--config", cfg_path.string(), "--checkpoint",
                      (out1 / "checkpoint.bin").string(), "--episodes", "2"}) == dna::kExitOk);

  // Resume from the final checkpoint and keep training a little.
  const fs::path out4 = dir / "run4";
  REQUIRE(dna::run_cli({"train", "--config", cfg_path.string(), "--seed", "5", "--out-dir",
                        out4.string(), "--resume",
                        (out1 / "checkpoint.bin").string()}) == dna::kExitOk);
  fs::remove_all(dir);
}

TEST_CASE("cli noise-probe and emit-plots round trip", "[experiments]") {
  const fs::path dir = fresh_dir("dna_cli_probe");
  const fs::path cfg_path = dir / "tiny.cfg";
  std::ofstream(cfg_path) << tiny_train_config();

  const fs::path out = dir / "probe";
  REQUIRE(dna::run_cli({"noise-probe", "--config", cfg_path.string(), "--seed", "3", "--out-dir",
                        out.string(), "--rollouts", "2"}) == dna::kExitOk);
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(fs::exists(out / "metrics.jsonl"));

  REQUIRE(dna::run_cli({"emit-plots", "--metrics", out.string()}) == dna::kExitOk);
  CHECK(fs::exists(out / "plots" / "curves_noise.csv"));
  const std::string noise = slurp(out / "plots" / "curves_noise.csv");
  CHECK(noise.find("noise.policy.sigma") != std::string::npos);
  // Seed column came from the manifest.
  CHECK(noise.find(",3,") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli interference writes manifest and tables", "[experiments]") {
  const fs::path dir = fresh_dir("dna_cli_interf");
  const fs::path cfg_path = dir / "interf.cfg";
  std::ofstream(cfg_path) << "sigma1_grid = 0.5\n"
                             "seeds = 2\n"
                             "train_steps = 10\n"
                             "batch_size = 8\n"
                             "eval_grid_size = 32\n"
                             "joint_hidden = 8,12\n"
                             "dual_hidden = 8,8\n";
  const fs::path out = dir / "out";
  REQUIRE(dna::run_cli({"interference", "--config", cfg_path.string(), "--out-dir", out.string(),
                        "--deterministic"}) == dna::kExitOk);
  CHECK(fs::exists(out / "manifest.json"));
  const std::string table = slurp(out / "interference.csv");
  CHECK(table.rfind("sigma1,", 0) == 0);
  CHECK(slurp(out / "interference_cells.csv").find("0.5,") != std::string::npos);

  const nlohmann::json manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["experiment"] == "interference");
  CHECK(manifest["config_hash"].get<std::string>().size() == 16);
  fs::remove_all(dir);
}
