#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "flame/engine.hpp"
#include "flame/models.hpp"

namespace flame {

/// Held-out rows (indices into the model's store) for one client.
struct EvalSplit {
  IndexList validation;
  IndexList test;
};

struct ModelScore {
  double loss = 0.0;
  double acc = 0.0;  // NaN for regression
};

struct ClientEval {
  ModelScore pm, gm, hm;           // test metrics
  ModelScore pm_val, gm_val, hm_val;
  bool hm_uses_pm = true;
  bool benign = true;
};

struct ModelSummary {
  double mean_loss = 0.0;
  double mean_acc = 0.0;
  double loss_var = 0.0;  // population variance of per-client test losses
  double benign_loss = 0.0;
  double benign_acc = 0.0;
};

struct MetricsRecord {
  int round = 0;
  std::vector<ClientEval> clients;
  ModelSummary pm, gm, hm;
  double lyapunov = 0.0;
  double grad_sq = 0.0;       // ||grad L~(P^t)||^2
  double mean_sq_grad = 0.0;  // running average of grad_sq over rounds 1..t
  double descent_gap = 0.0;   // filled once round t+1 is known
  double relerr_gap = 0.0;
};

/// Splits each client's rows into a validation part (the first `fraction` after a seeded
/// shuffle) and keeps `test_rows` for testing.
std::vector<EvalSplit> make_eval_splits(const std::vector<IndexList>& client_rows, double fraction,
                                        const std::vector<IndexList>& test_rows, std::uint64_t seed,
                                        std::vector<IndexList>* train_rows);

double population_variance(const std::vector<double>& xs);

/// PM is theta_i, GM is w. HM picks per client by validation (max accuracy, or min loss for
/// regression); ties keep PM.
std::vector<ClientEval> evaluate(const RunState& state, const std::vector<LossModel>& models,
                                 const std::vector<EvalSplit>& splits,
                                 const std::vector<bool>& benign = {});

ModelSummary summarize(const std::vector<ClientEval>& clients, ModelScore ClientEval::*which);

/// Augmented Lagrangian of the current state (no tolerance terms).
double lagrangian(const RunState& state, const std::vector<LossModel>& models, const HyperParams& hp);

/// Lagrangian plus sum_i iota_i eps_i.
double lyapunov(const RunState& state, const std::vector<LossModel>& models, const HyperParams& hp,
                const std::vector<double>& iota);

struct GradBlocks {
  double theta = 0.0;
  double w_local = 0.0;
  double pi = 0.0;
  double w = 0.0;
  double total() const { return theta + w_local + pi + w; }
};

/// Squared norms of the block gradients of the Lyapunov function.
GradBlocks lyapunov_grad_sq(const RunState& state, const std::vector<LossModel>& models,
                            const HyperParams& hp);

/// sum_i (||w' - w||^2 + ||w_i' - w_i||^2 + ||theta_i' - theta_i||^2)
double delta_gamma(const RunState& prev, const RunState& next);

double descent_gap(double lyap_t, double lyap_next, double D1, double delta_gamma_next);
double relerr_gap(double grad_sq_t, double D2, double delta_gamma_next, double eps_sum_next);

/// Least-squares slope of log(avg_T - floor) against log T for T in [t_min, t_max], where
/// avg[k] is the running average after round T = k + 1.
double rate_fit(const std::vector<double>& running_avg, double floor, int t_min = 10, int t_max = 500);

double eps_sum(const RunState& state);

/// Accumulates per-round convergence diagnostics for a run.
class DiagnosticsTracker {
 public:
  DiagnosticsTracker(const std::vector<LossModel>& models, const HyperParams& hp);

  void observe(const RunState& state);

  const std::vector<MetricsRecord>& records() const { return records_; }
  const FeasibilityReport& feasibility() const { return report_; }
  /// w-block squared gradient for every observed state.
  const std::vector<double>& w_block() const { return w_block_; }
  double worst_descent_slack() const;  // min over t of descent_gap / (1 + |L~^t|)
  double worst_relerr_gap() const;
  bool lyapunov_monotone(double rel_tol) const;

 private:
  const std::vector<LossModel>& models_;
  HyperParams hp_;
  FeasibilityReport report_;
  std::vector<double> iota_;
  std::vector<MetricsRecord> records_;
  std::vector<double> w_block_;
  RunState prev_;
  double grad_sum_ = 0.0;
  bool have_prev_ = false;
};

/// CSV header plus one line per client and model, and summary lines with client "all".
void write_csv_header(std::ostream& os);
void write_csv_rows(std::ostream& os, const std::string& run_id, const std::string& mode,
                    const MetricsRecord& rec);

nlohmann::json record_to_json(const MetricsRecord& rec);

}  // namespace flame
