#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flame/models.hpp"
#include "flame/types.hpp"

namespace flame {

enum class Mode { flame, pfedme, fedadmm, fedavg, lp_proj2 };
enum class AlphaScheme { uniform, proportional };

std::string mode_name(Mode m);
Mode parse_mode(const std::string& name);

struct HyperParams {
  double lambda = 1.0;
  double rho = 0.1;
  double eta = 0.01;
  int H = 1;                 // inner passes per round
  int T = 100;               // total rounds
  std::size_t s = 0;         // clients per round, 0 means all
  double v = 0.9;            // tolerance contraction
  double eps0 = 1.0;
  std::size_t batch_size = 100;
  AlphaScheme alpha = AlphaScheme::uniform;
  Mode mode = Mode::flame;
  std::size_t d_sub = 0;     // projection rank for lp_proj2
  double L_estimate = 1.0;   // smoothness bound used by the feasibility report
  bool weighted_aggregation = false;  // experimental: sum alpha_i u_i / sum alpha_i
  bool allow_infeasible = false;
  int threads = 1;

  /// Throws config_invalid on out-of-range values.
  void validate(std::size_t m) const;
};

struct ClientState {
  ParamVector theta;
  ParamVector w_local;
  ParamVector pi;
  ParamVector u;
  double eps = 1.0;
  double alpha = 1.0;
  double v = 0.9;
  // Diagnostics of the last local solve.
  double residual_sq = 0.0;
  int iters_used = 0;
  bool met_tolerance = true;
};

struct ServerState {
  ParamVector w;
  int round = 0;
  std::uint64_t seed = 0;
  IndexList selected;
};

struct RunState {
  ServerState server;
  std::vector<ClientState> clients;
  /// Last message each client uploaded; unselected clients are represented by it.
  std::vector<ParamVector> messages;
  Matrix projection;  // empty unless lp_proj2
};

struct ClientFeasibility {
  bool descent = false;         // lambda^2 a^2 (1+rho)/rho^2 - (lambda a + rho)/2 < 0
  bool rho_dominates = false;   // rho >= lambda a
  bool curvature = false;       // (1-rho^2) lambda^2 a^2 / rho^2 - (L a + rho)/2 > 0
  bool curvature_lambda = false;  // the same with lambda a in place of L a
  double iota = 0.0;
  double curvature_value = 0.0;
};

struct FeasibilityReport {
  std::vector<ClientFeasibility> clients;
  double D1 = 0.0;
  double D2 = 0.0;
  bool feasible() const;
  bool iota_positive() const;
  std::string describe() const;
};

std::vector<double> client_alphas(const std::vector<LossModel>& models, AlphaScheme scheme);

FeasibilityReport check_feasibility(const HyperParams& hp, const std::vector<double>& alphas);
FeasibilityReport check_feasibility(const HyperParams& hp, std::size_t m);

struct InitOptions {
  /// Custom initial client states; rejected unless pi = lambda alpha (theta - w_i).
  const std::vector<ClientState>* initial = nullptr;
  /// Explicit projection (tests may pass the identity).
  const Matrix* projection = nullptr;
};

RunState init_run(const HyperParams& hp, const std::vector<LossModel>& models, std::uint64_t seed,
                  const InitOptions& opts = {});

/// Seeded Gaussian d_sub x d matrix scaled by 1/sqrt(d_sub).
Matrix make_projection(std::size_t d_sub, std::size_t d, std::uint64_t seed);

/// One local round for a selected client.
ClientState client_update(const ClientState& client, const LossModel& model, const ParamVector& w,
                          const HyperParams& hp, std::uint64_t seed, int round, std::size_t id,
                          const Matrix* projection = nullptr);

/// Mean of the messages summed in ascending client order; weights are used only when given.
ParamVector server_aggregate(const std::vector<ParamVector>& u,
                             const std::vector<double>* weights = nullptr);

IndexList select_clients(std::size_t m, std::size_t s, int round, std::uint64_t seed);

struct RunHooks {
  /// Called after initialization (round 0) and after every round.
  std::function<void(const RunState&)> on_round;
  /// Rewrites a selected client's upload. Default is the honest u.
  std::function<ParamVector(std::size_t client, int round, const ParamVector& honest)> upload;
  /// Replaces the server mean (e.g. a robust rule). Receives all m cached messages.
  std::function<ParamVector(const std::vector<ParamVector>& messages)> aggregate;
};

/// Runs rounds until state.server.round == hp.T; resumable from any saved state.
void continue_run(RunState& state, const HyperParams& hp, const std::vector<LossModel>& models,
                  const RunHooks& hooks = {});

RunState run(const HyperParams& hp, const std::vector<LossModel>& models, std::uint64_t seed,
             const RunHooks& hooks = {});

/// Throws unless pi = lambda alpha (P theta - w_i) for every client (P = I unless projected).
void check_dual_identity(const RunState& state, const HyperParams& hp, double rel_tol = 1e-9);

struct ClientResidual {
  double grad_theta = 0.0;    // ||grad f(theta) + lambda (theta - w_i)||
  double dual = 0.0;          // ||alpha lambda (w_i - theta) + pi||
  double consensus = 0.0;     // ||w_i - w||
  double global_theta = 0.0;  // ||grad f(theta) + lambda (theta - w)||
};

struct StationarityReport {
  std::vector<ClientResidual> clients;
  double sum_pi = 0.0;         // ||sum pi_i||
  double global_mean = 0.0;    // ||w - sum alpha_i theta_i||
  double max_residual() const;
};

StationarityReport stationarity_residual(const RunState& state, const std::vector<LossModel>& models,
                                         const HyperParams& hp);

void save_checkpoint(const RunState& state, const HyperParams& hp, const std::filesystem::path& path);
RunState load_checkpoint(const HyperParams& hp, const std::filesystem::path& path);

}  // namespace flame
