#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "flame/attacks.hpp"
#include "flame/rng.hpp"
#include "flame/types.hpp"

namespace flame {

/// Federated linear regression with X_i^T X_i = N b I, analysed in closed form. The first
/// m_a clients are malicious.
struct LinRegWorld {
  std::size_t m = 10;
  std::size_t m_a = 0;
  std::size_t N = 5;
  std::size_t d = 20;
  double b = 1.0;
  double sigma = 1.0;
  double lambda = 1.0;
  double rho = 0.1;
  double gamma = 0.1;
  std::vector<ParamVector> theta;
  /// Use sigma^2/(b m) instead of sigma^2/(b N) in the sign-flip covariance term.
  bool sign_flip_bm = false;

  std::size_t m_b() const { return m - m_a; }
  double alpha() const { return 1.0 / static_cast<double>(m); }
  /// Message shrinkage (2 lambda alpha / (lambda alpha + rho)) (b / (b + lambda)).
  double q() const;
  /// Variance of each coordinate of theta_hat.
  double theta_hat_var() const { return sigma * sigma / (b * static_cast<double>(N)); }
  void validate() const;
};

struct ExactSolution {
  ParamVector w;
  std::vector<ParamVector> theta;
};

/// Equal design scale b: w = mean(theta_hat), theta_i = (b theta_hat_i + lambda w) / (b + lambda).
ExactSolution exact_solution(const std::vector<ParamVector>& theta_hats, double b, double lambda);
/// Per-client b_i: w = sum(b_i theta_hat_i / (b_i + lambda)) / sum(b_i / (b_i + lambda)).
ExactSolution exact_solution(const std::vector<ParamVector>& theta_hats, const std::vector<double>& b,
                             double lambda);

struct LossPair {
  double gm = 0.0;
  double pm = 0.0;
};

/// Average clean test losses at the exact solution.
LossPair expected_losses(const LinRegWorld& world);

/// Benign-average expected test losses after one round with message shrinkage q.
LossPair benign_losses(const LinRegWorld& world, AttackKind kind, double q);

struct AttackLossReport {
  double q = 0.0;
  LossPair flame;       // at world.q()
  LossPair reference;   // q = 1, the pFedMe / Ditto value
  LossPair threshold;   // minimiser of each loss in q; q between it and 1 means loss <= the q = 1 value
  bool gm_threshold_met = false;
  bool pm_threshold_met = false;
  bool gm_not_worse = false;  // flame.gm <= reference.gm
  bool pm_not_worse = false;
};

AttackLossReport attack_losses(const LinRegWorld& world, AttackKind kind);

/// attack_losses at q = 1.
LossPair ditto_pfedme_losses(const LinRegWorld& world, AttackKind kind);

struct OneRoundResult {
  ParamVector w;
  std::vector<ParamVector> theta;
};

/// u_i = q theta_hat_i for benign clients, attacked messages for the malicious ones, w their mean,
/// theta_i = (b theta_hat_i + lambda w) / (b + lambda).
OneRoundResult one_round_protocol(const LinRegWorld& world, const std::vector<ParamVector>& theta_hats,
                                  AttackKind kind, Rng& rng, double q);

/// theta_hat_i ~ N(theta_i, sigma^2/(b N) I).
std::vector<ParamVector> draw_theta_hats(const LinRegWorld& world, Rng& rng);

/// Expected test loss of parameters v on client i: sigma^2/2 + (b/2)||v - theta_i||^2.
double expected_test_loss(const LinRegWorld& world, std::size_t i, const ParamVector& v);

/// One realized test loss on fresh noise, drawn through its exact distribution.
double sampled_test_loss(const LinRegWorld& world, std::size_t i, const ParamVector& v, Rng& rng);

struct MonteCarloEstimate {
  LossPair mean;
  LossPair stderr_;
  std::size_t trials = 0;
};

/// Benign-average test losses of one_round_protocol over independent trials.
MonteCarloEstimate monte_carlo_losses(const LinRegWorld& world, AttackKind kind, double q,
                                      std::size_t trials, std::uint64_t seed, bool sample_test_noise);

struct FairnessReport {
  double q = 0.0;
  double var_gm = 0.0;
  double var_pm = 0.0;
  double dvar_dq = 0.0;  // derivative of var ||q theta_bar - theta_i||^2
};

FairnessReport fairness_variances(const std::vector<ParamVector>& theta, double b, double lambda, double q);

nlohmann::json world_to_json(const LinRegWorld& world);
nlohmann::json oracle_report_json(const LinRegWorld& world, AttackKind kind);

}  // namespace flame
