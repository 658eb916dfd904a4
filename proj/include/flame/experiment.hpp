#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flame/attacks.hpp"
#include "flame/datasets.hpp"
#include "flame/engine.hpp"
#include "flame/linreg_oracle.hpp"
#include "flame/metrics.hpp"
#include "flame/models.hpp"
#include "flame/partitioner.hpp"

namespace flame {

enum class DatasetKind { synth_linreg, synth_classification, idx };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::synth_linreg;
  // Federation size; also the partition's client count for classification data.
  std::size_t m = 10;
  // synth_linreg
  std::size_t N = 50;
  std::size_t d = 10;
  double b = 1.0;
  double sigma = 0.1;
  ThetaSpec theta;
  // synth_classification
  std::size_t n_per_client = 200;
  int classes = 10;
  double separation = 3.0;
  // idx
  std::filesystem::path images;
  std::filesystem::path labels;
  std::size_t max_samples = 0;  // 0 keeps everything
};

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::dirichlet_label;
  int q = 2;
  double beta = 0.5;
  double sigma = 0.1;
};

enum class Algorithm { engine, ditto };
enum class Aggregator { mean, multi_krum };

struct OracleSpec {
  std::size_t m = 10;
  std::vector<std::size_t> m_a{2, 5};
  std::size_t N = 5;
  std::size_t d = 20;
  double b = 1.0;
  double sigma = 1.0;
  double gamma = 0.1;
  double lambda = 1.0;
  std::optional<double> rho;  // default lambda / m
  double theta_center = 1.0;
  double theta_spread = 0.5;
  std::size_t trials = 10000;
  std::size_t fairness_sets = 20;
  bool sign_flip_bm = false;
  std::vector<AttackKind> attacks{AttackKind::same_value, AttackKind::sign_flip, AttackKind::gaussian};
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSpec dataset;
  PartitionSpec partition;
  ModelKind model = ModelKind::logistic;
  std::vector<int> hidden{32, 16};
  HyperParams hp;
  Algorithm algorithm = Algorithm::engine;
  Aggregator aggregator = Aggregator::mean;
  std::size_t krum_f = 0;
  std::size_t krum_k = 0;  // 0 means m - f
  AttackConfig attack;
  std::vector<std::uint64_t> seeds{1};
  int eval_every = 1;
  double validation_fraction = 0.1;
  double test_fraction = 0.2;
  bool diagnostics = true;
  std::filesystem::path output = "out";
  std::optional<OracleSpec> oracle;
  nlohmann::json raw;  // the validated config as given
};

/// Rejects unknown keys and out-of-range values with config_invalid errors naming the key.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// FNV-1a over the compact dump of the config.
std::string config_hash(const nlohmann::json& j);

const char* library_version();

/// Everything needed to train and evaluate one seed.
struct Federation {
  std::shared_ptr<const SampleStore> store;
  std::vector<LossModel> models;      // bound to training rows
  std::vector<IndexList> train_rows;
  std::vector<EvalSplit> splits;
  IndexList malicious;
  std::vector<bool> benign;
};

Federation build_federation(const ExperimentConfig& cfg, std::uint64_t seed);

struct SeedResult {
  std::uint64_t seed = 0;
  MetricsRecord final;
  std::vector<MetricsRecord> history;
  std::vector<double> train_loss_pm;  // per evaluated round
  std::vector<double> train_loss_gm;
  std::vector<int> eval_rounds;
};

/// Trains one seed and returns evaluated rounds (diagnostics included for engine runs).
SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed);

/// Runs all seeds, writing seed_<s>.csv, summary.json and manifest.json under cfg.output.
nlohmann::json run_experiment(const ExperimentConfig& cfg);

/// One run set per value of `axis` (lambda, H, rho or s), each under output/<axis>_<value>,
/// plus curves.csv with per-round training loss.
nlohmann::json sweep(const ExperimentConfig& cfg, const std::string& axis, const std::vector<double>& values);

/// Monte Carlo and closed-form checks of the regression oracle; "pass" is true if all checks pass.
nlohmann::json verify_oracle(const ExperimentConfig& cfg);

/// Equal-norm or Gaussian parameter sets for oracle worlds.
std::vector<ParamVector> oracle_thetas(std::size_t m, std::size_t d, double center, double spread,
                                       std::uint64_t seed);

}  // namespace flame
