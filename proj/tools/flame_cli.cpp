// Experiment runner. Exit codes: 0 success, 1 runtime failure (including failed oracle
// checks), 2 invalid configuration or usage.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flame/error.hpp"
#include "flame/experiment.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  int threads = 0;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--out", c.out, "output directory (overrides config and FLAME_OUTPUT_DIR)");
  cmd->add_option("--threads", c.threads, "worker threads for client updates")->check(CLI::PositiveNumber);
  cmd->add_option("--seed-override", c.seed, "run this single seed instead of the configured list");
}

flame::ExperimentConfig load(const Common& c) {
  std::ifstream in(c.config);
  if (!in) throw flame::Error(flame::Errc::config_invalid, "config: cannot open " + c.config);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw flame::Error(flame::Errc::config_invalid, std::string("config: parse error: ") + e.what());
  }
  if (!j.is_object()) throw flame::Error(flame::Errc::config_invalid, "config: top level must be an object");
  if (c.threads > 0) j["hparams"]["threads"] = c.threads;
  if (c.seed) j["seeds"] = std::vector<std::uint64_t>{*c.seed};
  if (!c.out.empty()) {
    j["output"] = c.out;
  } else if (const char* env = std::getenv("FLAME_OUTPUT_DIR"); env && *env) {
    j["output"] = env;
  }
  return flame::parse_config(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated ADMM experiment runner"};
  app.require_subcommand(1);
  app.set_version_flag("--version", flame::library_version());

  Common run_opts, oracle_opts, sweep_opts, inspect_opts;
  auto* run_cmd = app.add_subcommand("run", "train every configured seed and write metrics");
  add_common(run_cmd, run_opts);
  auto* oracle_cmd = app.add_subcommand("verify-oracle", "check the regression oracle against simulation");
  add_common(oracle_cmd, oracle_opts);
  auto* sweep_cmd = app.add_subcommand("sweep", "repeat the experiment over one hyperparameter");
  add_common(sweep_cmd, sweep_opts);
  std::string axis;
  std::vector<double> values;
  sweep_cmd->add_option("--axis", axis, "lambda, H, rho or s")->required()->check(CLI::IsMember({"lambda", "H", "rho", "s"}));
  sweep_cmd->add_option("--values", values, "values to try")->required()->delimiter(',');
  auto* inspect_cmd = app.add_subcommand("inspect", "print a manifest (from --out) or a resolved config");
  add_common(inspect_cmd, inspect_opts, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run_cmd) {
      const auto cfg = load(run_opts);
      const auto summary = flame::run_experiment(cfg);
      std::cout << summary["across_seeds"].dump(2) << '\n'
                << "wrote " << cfg.output.string() << " (config " << summary["config_hash"].get<std::string>() << ")\n";
      return 0;
    }
    if (*oracle_cmd) {
      const auto cfg = load(oracle_opts);
      const auto report = flame::verify_oracle(cfg);
      std::filesystem::create_directories(cfg.output);
      std::ofstream(cfg.output / "oracle_report.json") << report.dump(2) << '\n';
      for (const auto& c : report["checks"])
        std::cout << (c["pass"].get<bool>() ? "[PASS] " : "[FAIL] ") << c["name"].get<std::string>() << '\n';
      return report["pass"].get<bool>() ? 0 : 1;
    }
    if (*sweep_cmd) {
      const auto cfg = load(sweep_opts);
      const auto out = flame::sweep(cfg, axis, values);
      std::cout << "swept " << axis << " over " << values.size() << " values; curves in "
                << (cfg.output / "curves.csv").string() << '\n';
      return 0;
    }
    if (*inspect_cmd) {
      if (!inspect_opts.out.empty() && std::filesystem::exists(std::filesystem::path(inspect_opts.out) / "manifest.json")) {
        std::ifstream in(std::filesystem::path(inspect_opts.out) / "manifest.json");
        std::cout << in.rdbuf();
        return 0;
      }
      if (inspect_opts.config.empty())
        throw flame::Error(flame::Errc::config_invalid, "inspect needs --config or an --out directory with a manifest");
      const auto cfg = load(inspect_opts);
      nlohmann::json j = {{"name", cfg.name},
                          {"config_hash", flame::config_hash(cfg.raw)},
                          {"version", flame::library_version()},
                          {"config", cfg.raw}};
      std::cout << j.dump(2) << '\n';
      return 0;
    }
  } catch (const flame::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == flame::Errc::config_invalid ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
