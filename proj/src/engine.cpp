#include "flame/engine.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "flame/error.hpp"
#include "flame/rng.hpp"

namespace flame {

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::flame: return "flame";
    case Mode::pfedme: return "pfedme";
    case Mode::fedadmm: return "fedadmm";
    case Mode::fedavg: return "fedavg";
    case Mode::lp_proj2: return "lp_proj2";
  }
  return "unknown";
}

Mode parse_mode(const std::string& name) {
  for (auto m : {Mode::flame, Mode::pfedme, Mode::fedadmm, Mode::fedavg, Mode::lp_proj2})
    if (mode_name(m) == name) return m;
  throw Error(Errc::config_invalid, "unknown mode '" + name + "'");
}

void HyperParams::validate(std::size_t m) const {
  auto need = [](bool ok, const std::string& msg) { require(ok, Errc::config_invalid, msg); };
  need(m >= 1, "need at least one client");
  need(lambda > 0 && std::isfinite(lambda), "lambda must be positive");
  need(rho > 0 && std::isfinite(rho), "rho must be positive");
  need(eta > 0, "eta must be positive");
  need(H >= 1, "H must be >= 1");
  need(T >= 0, "T must be >= 0");
  need(s <= m, "s must not exceed m");
  need(v > 0 && v < 1, "v must lie in (0, 1)");
  need(eps0 >= 0, "eps0 must be nonnegative");
  need(threads >= 1, "threads must be >= 1");
  need(L_estimate >= 0, "L_estimate must be nonnegative");
  if (mode == Mode::lp_proj2) need(d_sub >= 1, "lp_proj2 needs d_sub >= 1");
}

std::vector<double> client_alphas(const std::vector<LossModel>& models, AlphaScheme scheme) {
  std::vector<double> a(models.size(), 1.0 / static_cast<double>(models.size()));
  if (scheme == AlphaScheme::proportional) {
    double n = 0.0;
    for (const auto& mdl : models) n += static_cast<double>(mdl.num_samples());
    for (std::size_t i = 0; i < models.size(); ++i)
      a[i] = static_cast<double>(models[i].num_samples()) / n;
  }
  return a;
}

bool FeasibilityReport::feasible() const {
  return std::all_of(clients.begin(), clients.end(), [](const ClientFeasibility& c) {
    return c.descent && c.rho_dominates && c.curvature;
  });
}

bool FeasibilityReport::iota_positive() const {
  return std::all_of(clients.begin(), clients.end(),
                     [](const ClientFeasibility& c) { return c.iota > 0; });
}

std::string FeasibilityReport::describe() const {
  std::ostringstream os;
  std::size_t bad[4] = {0, 0, 0, 0};
  for (const auto& c : clients) {
    bad[0] += !c.descent;
    bad[1] += !c.rho_dominates;
    bad[2] += !c.curvature;
    bad[3] += !c.curvature_lambda;
  }
  os << "descent fails on " << bad[0] << ", rho>=lambda*alpha fails on " << bad[1]
     << ", curvature (L form) fails on " << bad[2] << ", curvature (lambda form) fails on " << bad[3]
     << " of " << clients.size() << " clients; D1=" << D1 << " D2=" << D2;
  return os.str();
}

FeasibilityReport check_feasibility(const HyperParams& hp, const std::vector<double>& alphas) {
  const double lam = hp.lambda, rho = hp.rho, L = hp.L_estimate;
  FeasibilityReport r;
  r.D1 = rho / 2.0;
  r.D2 = 0.0;
  for (double a : alphas) {
    ClientFeasibility c;
    const double la2 = lam * lam * a * a;
    const double descent_val = la2 * (1.0 + rho) / (rho * rho) - (lam * a + rho) / 2.0;
    c.descent = descent_val < 0;
    c.rho_dominates = rho >= lam * a;
    c.curvature_value = (1.0 - rho * rho) * la2 / (rho * rho) - (L * a + rho) / 2.0;
    c.curvature = c.curvature_value > 0;
    c.curvature_lambda = (1.0 - rho * rho) * la2 / (rho * rho) - (lam * a + rho) / 2.0 > 0;
    // Written as (1/rho^2 - 1) lambda^2 a^2 - (L a + rho)/2, i.e. curvature_value.
    c.iota = a * a / (c.curvature_value * (1.0 - hp.v));
    r.D1 = std::min(r.D1, -descent_val);
    r.D2 = std::max(r.D2, 4.0 * la2 * (1.0 + 1.0 / (rho * rho)) +
                              2.0 * a * a * (L * L + 2.0 * lam * lam) + 2.0 * rho * rho + 2.0);
    r.clients.push_back(c);
  }
  return r;
}

FeasibilityReport check_feasibility(const HyperParams& hp, std::size_t m) {
  return check_feasibility(hp, std::vector<double>(m, 1.0 / static_cast<double>(m)));
}

Matrix make_projection(std::size_t d_sub, std::size_t d, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::projection);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix P(static_cast<Eigen::Index>(d_sub), static_cast<Eigen::Index>(d));
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_sub));
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    for (Eigen::Index j = 0; j < P.cols(); ++j) P(i, j) = scale * normal(rng);
  return P;
}

namespace {

ParamVector lift(const RunState& st, const ParamVector& theta) {
  return st.projection.size() > 0 ? ParamVector(st.projection * theta) : theta;
}

}  // namespace

void check_dual_identity(const RunState& state, const HyperParams& hp, double rel_tol) {
  for (std::size_t i = 0; i < state.clients.size(); ++i) {
    const auto& c = state.clients[i];
    const ParamVector expect = hp.lambda * c.alpha * (lift(state, c.theta) - c.w_local);
    const double err = (c.pi - expect).norm();
    require(err <= rel_tol * (1.0 + c.pi.norm()), Errc::invalid_argument,
            "dual identity violated on client " + std::to_string(i) + " (error " + std::to_string(err) + ")");
  }
}

RunState init_run(const HyperParams& hp, const std::vector<LossModel>& models, std::uint64_t seed,
                  const InitOptions& opts) {
  const std::size_t m = models.size();
  hp.validate(m);
  const auto alphas = client_alphas(models, hp.alpha);

  if (!hp.allow_infeasible && (hp.mode == Mode::flame || hp.mode == Mode::lp_proj2)) {
    const auto rep = check_feasibility(hp, alphas);
    require(rep.feasible(), Errc::infeasible,
            "hyperparameters violate the sufficient-descent conditions (" + rep.describe() +
                "); set allow_infeasible to run anyway");
  }

  const std::size_t d = models.front().dim();
  for (const auto& mdl : models)
    require(mdl.dim() == d, Errc::dimension_mismatch, "all clients must share the model dimension");

  RunState st;
  st.server.seed = seed;
  st.server.round = 0;
  if (hp.mode == Mode::lp_proj2) {
    if (opts.projection) {
      st.projection = *opts.projection;
      require(static_cast<std::size_t>(st.projection.cols()) == d, Errc::dimension_mismatch,
              "projection must have d columns");
    } else {
      require(hp.d_sub < d, Errc::config_invalid, "lp_proj2: d_sub must be smaller than d");
      st.projection = make_projection(hp.d_sub, d, seed);
    }
  }

  if (opts.initial) {
    require(opts.initial->size() == m, Errc::invalid_argument, "initial state count != m");
    st.clients = *opts.initial;
    for (std::size_t i = 0; i < m; ++i) {
      auto& c = st.clients[i];
      c.alpha = alphas[i];
      c.u = c.w_local + c.pi / hp.rho;
    }
    if (hp.mode == Mode::flame || hp.mode == Mode::lp_proj2) check_dual_identity(st, hp, 1e-12);
    if (hp.mode == Mode::pfedme || hp.mode == Mode::fedavg)
      for (const auto& c : st.clients)
        require(c.pi.isZero(0.0), Errc::invalid_argument, "this mode requires pi = 0 at start");
  } else {
    // One shared starting point, so w_i = lift(theta) and pi = 0 satisfy the dual identity.
    const ParamVector theta0 = init_params(models.front(), seed);
    const ParamVector w0 = lift(st, theta0);
    for (std::size_t i = 0; i < m; ++i) {
      ClientState c;
      c.theta = theta0;
      c.w_local = w0;
      c.pi = ParamVector::Zero(w0.size());
      c.u = w0;
      c.eps = hp.eps0;
      c.alpha = alphas[i];
      c.v = hp.v;
      st.clients.push_back(std::move(c));
    }
  }

  st.messages.reserve(m);
  for (const auto& c : st.clients) st.messages.push_back(c.u);
  st.server.w = server_aggregate(st.messages, hp.weighted_aggregation ? &alphas : nullptr);
  return st;
}

ClientState client_update(const ClientState& client, const LossModel& model, const ParamVector& w,
                          const HyperParams& hp, std::uint64_t seed, int round, std::size_t id,
                          const Matrix* projection) {
  ClientState c = client;
  ProxConfig cfg;
  cfg.lambda = hp.lambda;
  cfg.eta = hp.eta;
  cfg.max_passes = hp.H;
  cfg.eps_target = c.v * c.eps;
  cfg.batch_size = hp.batch_size;
  cfg.alpha = c.alpha;
  cfg.seed = seed;
  cfg.client = id;
  cfg.round = static_cast<std::uint64_t>(round);

  const double la = hp.lambda * c.alpha;
  const double rho = hp.rho;
  auto record = [&c](const ProxResult& r) {
    c.theta = r.theta;
    c.residual_sq = r.residual_sq;
    c.iters_used = r.iters_used;
    c.met_tolerance = r.met_tolerance;
  };

  switch (hp.mode) {
    case Mode::flame: {
      record(prox_solve(model, c.w_local, c.theta, cfg));
      c.w_local = (la * c.theta + rho * w - c.pi) / (la + rho);
      c.pi += rho * (c.w_local - w);
      c.u = c.w_local + c.pi / rho;
      break;
    }
    case Mode::pfedme: {
      record(prox_solve(model, c.w_local, c.theta, cfg));
      c.w_local = (la * c.theta + rho * w) / (la + rho);
      c.u = c.w_local;
      break;
    }
    case Mode::fedadmm: {
      // min alpha f(theta) + <pi, theta - w> + (rho/2)||theta - w||^2, with w_i tied to theta.
      cfg.lambda = rho / c.alpha;
      record(prox_solve(model, w - c.pi / rho, c.theta, cfg));
      c.w_local = c.theta;
      c.pi += rho * (c.w_local - w);
      c.u = c.w_local + c.pi / rho;
      break;
    }
    case Mode::fedavg: {
      c.theta = local_sgd(model, w, cfg);
      c.residual_sq = 0.0;
      c.iters_used = hp.H;
      c.met_tolerance = true;
      c.w_local = c.theta;
      c.u = c.theta;
      break;
    }
    case Mode::lp_proj2: {
      require(projection != nullptr, Errc::invalid_argument, "lp_proj2 needs a projection");
      cfg.projection = projection;
      record(prox_solve(model, c.w_local, c.theta, cfg));
      c.w_local = (la * (*projection * c.theta) + rho * w - c.pi) / (la + rho);
      c.pi += rho * (c.w_local - w);
      c.u = c.w_local + c.pi / rho;
      break;
    }
  }
  c.eps = c.v * c.eps;
  return c;
}

ParamVector server_aggregate(const std::vector<ParamVector>& u, const std::vector<double>* weights) {
  require(!u.empty(), Errc::invalid_argument, "aggregate: no messages");
  ParamVector sum = ParamVector::Zero(u.front().size());
  double total = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    require(u[i].size() == sum.size(), Errc::dimension_mismatch, "aggregate: message size mismatch");
    const double wt = weights ? (*weights)[i] : 1.0;
    sum += wt * u[i];
    total += wt;
  }
  return sum / total;
}

IndexList select_clients(std::size_t m, std::size_t s, int round, std::uint64_t seed) {
  require(s >= 1 && s <= m, Errc::invalid_argument, "select_clients: need 1 <= s <= m");
  IndexList ids = all_positions(m);
  if (s == m) return ids;
  Rng rng = make_rng(seed, Stream::selection, {static_cast<std::uint64_t>(round)});
  // Partial Fisher-Yates: the first s slots are a uniform sample without replacement.
  for (std::size_t k = 0; k < s; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, m - 1);
    std::swap(ids[k], ids[pick(rng)]);
  }
  ids.resize(s);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void continue_run(RunState& state, const HyperParams& hp, const std::vector<LossModel>& models,
                  const RunHooks& hooks) {
  const std::size_t m = models.size();
  hp.validate(m);
  require(state.clients.size() == m, Errc::invalid_argument, "state/model client count mismatch");
  const std::size_t s = hp.s == 0 ? m : hp.s;
  const auto alphas = client_alphas(models, hp.alpha);
  const Matrix* proj = state.projection.size() > 0 ? &state.projection : nullptr;

  if (state.server.round == 0 && hooks.on_round) hooks.on_round(state);

  while (state.server.round < hp.T) {
    const int t = state.server.round;
    state.server.selected = select_clients(m, s, t, state.server.seed);
    const auto& sel = state.server.selected;

    std::vector<ClientState> updated(sel.size());
    std::vector<std::exception_ptr> errors(sel.size());
    auto work = [&](std::size_t k) {
      try {
        const auto id = sel[k];
        updated[k] = client_update(state.clients[id], models[id], state.server.w, hp,
                                   state.server.seed, t, id, proj);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    };
    const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(hp.threads), sel.size());
    if (n_threads <= 1) {
      for (std::size_t k = 0; k < sel.size(); ++k) work(k);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < n_threads; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t k = w; k < sel.size(); k += n_threads) work(k);
        });
      for (auto& th : pool) th.join();
    }
    for (std::size_t k = 0; k < sel.size(); ++k) {
      if (!errors[k]) continue;
      try {
        std::rethrow_exception(errors[k]);
      } catch (const Error& e) {
        throw Error(e.code(), "round " + std::to_string(t) + ", client " + std::to_string(sel[k]) +
                                  ": " + e.what());
      }
    }

    for (std::size_t k = 0; k < sel.size(); ++k) {
      const auto id = sel[k];
      state.clients[id] = std::move(updated[k]);
      state.messages[id] = hooks.upload ? hooks.upload(id, t, state.clients[id].u) : state.clients[id].u;
    }
    state.server.w = hooks.aggregate
                         ? hooks.aggregate(state.messages)
                         : server_aggregate(state.messages, hp.weighted_aggregation ? &alphas : nullptr);
    require(all_finite(state.server.w), Errc::diverged,
            "non-finite global model after round " + std::to_string(t));
    state.server.round = t + 1;
    if (hooks.on_round) hooks.on_round(state);
  }
}

RunState run(const HyperParams& hp, const std::vector<LossModel>& models, std::uint64_t seed,
             const RunHooks& hooks) {
  RunState st = init_run(hp, models, seed);
  continue_run(st, hp, models, hooks);
  return st;
}

double StationarityReport::max_residual() const {
  double mx = std::max(sum_pi, global_mean);
  for (const auto& c : clients)
    mx = std::max({mx, c.grad_theta, c.dual, c.consensus, c.global_theta});
  return mx;
}

StationarityReport stationarity_residual(const RunState& state, const std::vector<LossModel>& models,
                                         const HyperParams& hp) {
  StationarityReport rep;
  const auto& w = state.server.w;
  ParamVector pi_sum = ParamVector::Zero(w.size());
  ParamVector theta_mean = ParamVector::Zero(state.clients.front().theta.size());
  for (std::size_t i = 0; i < state.clients.size(); ++i) {
    const auto& c = state.clients[i];
    const ParamVector g = models[i].grad(c.theta);
    ClientResidual r;
    r.grad_theta = (g + hp.lambda * (c.theta - c.w_local)).norm();
    r.dual = (c.alpha * hp.lambda * (c.w_local - c.theta) + c.pi).norm();
    r.consensus = (c.w_local - w).norm();
    r.global_theta = (g + hp.lambda * (c.theta - w)).norm();
    rep.clients.push_back(r);
    pi_sum += c.pi;
    theta_mean += c.alpha * c.theta;
  }
  rep.sum_pi = pi_sum.norm();
  rep.global_mean = (w - theta_mean).norm();
  return rep;
}

}  // namespace flame
