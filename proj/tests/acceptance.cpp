// Acceptance checks. Prints one [PASS]/[FAIL]/[SKIP] line per criterion and exits nonzero on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "flame/attacks.hpp"
#include "flame/baselines.hpp"
#include "flame/engine.hpp"
#include "flame/experiment.hpp"
#include "flame/linreg_oracle.hpp"
#include "flame/metrics.hpp"
#include "flame/partitioner.hpp"
#include "support.hpp"

using namespace flame;
using flame::testing::make_classification;
using flame::testing::make_linreg;

namespace {

enum class Verdict { pass, fail, skip };

struct Outcome {
  Verdict verdict = Verdict::fail;
  std::string detail;
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

double rel(const ParamVector& a, const ParamVector& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }

// ---------------------------------------------------------------------------------------------
// 1. Dual identity along every round of a small test matrix.

Outcome dual_identity() {
  std::size_t configs = 0, checks = 0;
  double worst = 0.0;
  for (std::size_t m : {1u, 2u, 10u}) {
    for (bool logistic : {false, true}) {
      for (bool partial : {false, true}) {
        HyperParams hp;
        hp.lambda = 1.0;
        hp.rho = 0.1;
        hp.eta = 0.05;
        hp.H = 3;
        hp.T = 15;
        hp.batch_size = 8;
        hp.s = partial ? std::max<std::size_t>(1, m / 2) : 0;
        hp.allow_infeasible = true;

        std::vector<LossModel> models;
        if (logistic) {
          models = make_classification(m, 40, 5, 3, 11 + m).models;
        } else {
          models = make_linreg(m, 20, 5, 1.0, 0.1, 17 + m).models;
        }
        const auto alphas = client_alphas(models, hp.alpha);
        RunHooks hooks;
        hooks.on_round = [&](const RunState& st) {
          for (std::size_t i = 0; i < m; ++i) {
            const auto& c = st.clients[i];
            const double gap = (c.pi - hp.lambda * alphas[i] * (c.theta - c.w_local)).norm();
            worst = std::max(worst, gap / (1.0 + c.pi.norm()));
            ++checks;
          }
        };
        run(hp, models, 5, hooks);
        ++configs;
      }
    }
  }
  return {worst <= 1e-9 ? Verdict::pass : Verdict::fail,
          std::to_string(configs) + " configs, " + std::to_string(checks) +
              " client-rounds, worst scaled gap " + fmt(worst)};
}

// ---------------------------------------------------------------------------------------------
// 2 and 6 share one long LinReg run.

struct ClosedFormRun {
  HyperParams hp;
  bool any_feasible = false;
  int scan_points = 0, n_descent = 0, n_dominates = 0, n_curvature = 0, n_descent_curvature = 0;
  double theta_rel = 0.0;
  double w_rel = 0.0;
  double residual = 0.0;
  int rounds_to_tol = -1;
  std::vector<double> running_avg;
  double floor = 0.0;
  double max_w_block = 0.0;
  double worst_relerr = 0.0;
};

ClosedFormRun closed_form_run() {
  ClosedFormRun out;
  const std::size_t m = 10;
  auto fed = make_linreg(m, 50, 10, 1.0, 0.1, 2024);

  // Scan rho for the three conditions at lambda = 1, alpha = 1/m, L = b = 1.
  HyperParams scan;
  scan.lambda = 1.0;
  scan.L_estimate = 1.0;
  for (int k = 0; k <= 4000; ++k) {
    scan.rho = std::pow(10.0, -4.0 + 6.0 * k / 4000.0);
    const auto rep = check_feasibility(scan, m);
    out.any_feasible = out.any_feasible || rep.feasible();
    const auto& c = rep.clients.front();
    ++out.scan_points;
    out.n_descent += c.descent;
    out.n_dominates += c.rho_dominates;
    out.n_curvature += c.curvature;
    out.n_descent_curvature += c.descent && c.curvature;
  }

  // Exact local solves (eta = 1/(b + lambda), one full-batch pass).
  HyperParams& hp = out.hp;
  hp.lambda = 1.0;
  hp.rho = 0.2;
  hp.eta = 0.5;
  hp.H = 1;
  hp.T = 500;
  hp.batch_size = 0;
  hp.v = 0.5;
  hp.eps0 = 1e-8;
  hp.L_estimate = 1.0;
  hp.allow_infeasible = !out.any_feasible;

  // Stationary point from the normal equations, computed here rather than through the library.
  ParamVector w_star = ParamVector::Zero(10);
  for (const auto& h : fed.theta_hat) w_star += h;
  w_star /= static_cast<double>(m);
  std::vector<ParamVector> theta_star;
  for (const auto& h : fed.theta_hat) theta_star.push_back((1.0 * h + hp.lambda * w_star) / (1.0 + hp.lambda));

  DiagnosticsTracker tracker(fed.models, hp);
  RunHooks hooks;
  RunState after_first;
  hooks.on_round = [&](const RunState& st) {
    tracker.observe(st);
    if (st.server.round == 1) after_first = st;
    if (out.rounds_to_tol < 0) {
      double worst = rel(st.server.w, w_star);
      for (std::size_t i = 0; i < m; ++i) worst = std::max(worst, rel(st.clients[i].theta, theta_star[i]));
      if (worst <= 1e-5) out.rounds_to_tol = st.server.round;
    }
  };
  const auto final_state = run(hp, fed.models, 9, hooks);

  out.w_rel = rel(final_state.server.w, w_star);
  for (std::size_t i = 0; i < m; ++i)
    out.theta_rel = std::max(out.theta_rel, rel(final_state.clients[i].theta, theta_star[i]));
  out.residual = stationarity_residual(final_state, fed.models, hp).max_residual();

  const auto& recs = tracker.records();
  for (std::size_t t = 1; t < recs.size(); ++t) out.running_avg.push_back(recs[t].mean_sq_grad);
  out.floor = tracker.feasibility().D2 * eps_sum(after_first);
  for (double x : tracker.w_block()) out.max_w_block = std::max(out.max_w_block, x);
  out.worst_relerr = tracker.worst_relerr_gap();
  return out;
}

Outcome closed_form(const ClosedFormRun& r) {
  const bool converged = r.theta_rel <= 1e-5 && r.w_rel <= 1e-5 && r.residual <= 1e-6;
  std::ostringstream os;
  os << "feasible rho in [1e-4, 1e2] at lambda=1, L=1, m=10: " << (r.any_feasible ? "yes" : "none")
     << " (of " << r.scan_points << " grid points: descent " << r.n_descent << ", rho >= lambda alpha "
     << r.n_dominates << ", curvature " << r.n_curvature << ", descent and curvature " << r.n_descent_curvature
     << "); run at rho=" << r.hp.rho
     << ": theta rel " << fmt(r.theta_rel) << ", w rel " << fmt(r.w_rel) << ", residual "
     << fmt(r.residual) << ", tol reached at round " << r.rounds_to_tol;
  return {converged && r.any_feasible ? Verdict::pass : Verdict::fail, os.str()};
}

Outcome rate(const ClosedFormRun& r) {
  double slope = std::numeric_limits<double>::quiet_NaN();
  try {
    slope = rate_fit(r.running_avg, r.floor, 10, 500);
  } catch (const std::exception& e) {
    return {Verdict::fail, std::string("rate fit failed: ") + e.what()};
  }
  return {slope <= -0.8 ? Verdict::pass : Verdict::fail,
          "slope " + fmt(slope) + " over rounds 10-500, floor " + fmt(r.floor)};
}

// ---------------------------------------------------------------------------------------------
// 3. Degenerate modes.

Outcome degenerations() {
  double worst_gap = 0.0;
  bool pi_zero = true;
  auto compare = [&](const std::vector<LossModel>& models, HyperParams hp, std::uint64_t seed) {
    hp.mode = Mode::pfedme;
    std::map<int, RunState> eng;
    RunHooks hooks;
    hooks.on_round = [&](const RunState& st) {
      eng[st.server.round] = st;
      for (const auto& c : st.clients) pi_zero = pi_zero && c.pi.isZero(0.0);
    };
    run(hp, models, seed, hooks);
    int seen = 0;
    pfedme_run(hp, models, seed, [&](const BaselineState& b) {
      const auto& e = eng.at(b.round);
      double gap = (e.server.w - b.w).lpNorm<Eigen::Infinity>();
      for (std::size_t i = 0; i < models.size(); ++i) {
        gap = std::max(gap, (e.clients[i].theta - b.theta[i]).lpNorm<Eigen::Infinity>());
        gap = std::max(gap, (e.clients[i].w_local - b.w_local[i]).lpNorm<Eigen::Infinity>());
      }
      worst_gap = std::max(worst_gap, gap);
      ++seen;
    });
    if (seen != hp.T + 1) worst_gap = std::numeric_limits<double>::infinity();
  };

  HyperParams hp;
  hp.T = 50;
  hp.rho = 0.1;
  hp.eta = 0.05;
  hp.H = 5;
  hp.batch_size = 10;
  hp.allow_infeasible = true;
  compare(make_linreg(10, 30, 6, 1.0, 0.1, 3).models, hp, 1);
  hp.s = 5;
  compare(make_classification(10, 40, 5, 3, 4).models, hp, 2);

  // FedADMM: consensus on the pooled least-squares fit.
  const std::size_t m = 10, N = 50, d = 10;
  auto fed = make_linreg(m, N, d, 1.0, 0.1, 77);
  Matrix X(m * N, d);
  Eigen::VectorXd y(m * N);
  for (std::size_t i = 0; i < m; ++i) {
    X.middleRows(static_cast<Eigen::Index>(i * N), N) = fed.clients[i].X;
    y.segment(static_cast<Eigen::Index>(i * N), N) = fed.clients[i].y;
  }
  const ParamVector pooled = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  HyperParams admm;
  admm.mode = Mode::fedadmm;
  admm.rho = 0.1;  // local penalty rho / alpha = 1
  admm.eta = 0.5;  // 1 / (b + 1): exact local solve
  admm.H = 1;
  admm.batch_size = 0;
  admm.T = 500;
  admm.allow_infeasible = true;
  const auto st = run(admm, fed.models, 3);
  double admm_rel = rel(st.server.w, pooled);
  for (const auto& c : st.clients) admm_rel = std::max(admm_rel, rel(c.theta, pooled));

  const bool ok = worst_gap <= 1e-12 && pi_zero && admm_rel <= 1e-5;
  return {ok ? Verdict::pass : Verdict::fail,
          "pfedme max gap " + fmt(worst_gap) + (pi_zero ? ", pi == 0" : ", pi nonzero") +
              "; fedadmm rel error to pooled LS " + fmt(admm_rel)};
}

// ---------------------------------------------------------------------------------------------
// 4 and 5. Feasible LinReg runs.

struct FeasibleSummary {
  bool feasible = true;
  int runs = 0;
  double worst_increase = -1e300;  // max (L^{t+1} - L^t) / (1 + |L^t|)
  double worst_descent = 1e300;
  double worst_relerr = 1e300;          // full participation, the setting of the bound
  double worst_relerr_partial = 1e300;  // reported only
  double max_w_block = 0.0;
  std::string report;
};

FeasibleSummary feasible_runs() {
  FeasibleSummary s;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (bool partial : {false, true}) {
      HyperParams hp;
      hp.lambda = 0.5;
      hp.rho = 0.165;
      hp.L_estimate = 0.05;
      hp.eta = 1.0 / (0.05 + 0.5);
      hp.H = 1;
      hp.batch_size = 0;
      hp.T = 200;
      hp.v = 0.5;
      hp.eps0 = 1e-3;
      hp.s = partial ? 5 : 0;
      auto fed = make_linreg(10, 50, 10, 0.05, 0.1, 100 + seed);
      DiagnosticsTracker tracker(fed.models, hp);
      if (!tracker.feasibility().feasible()) s.feasible = false;
      if (s.report.empty()) s.report = tracker.feasibility().describe();
      RunHooks hooks;
      hooks.on_round = [&](const RunState& st) { tracker.observe(st); };
      run(hp, fed.models, seed, hooks);
      const auto& recs = tracker.records();
      for (std::size_t t = 0; t + 1 < recs.size(); ++t)
        s.worst_increase =
            std::max(s.worst_increase, (recs[t + 1].lyapunov - recs[t].lyapunov) / (1.0 + std::abs(recs[t].lyapunov)));
      s.worst_descent = std::min(s.worst_descent, tracker.worst_descent_slack());
      auto& slot = partial ? s.worst_relerr_partial : s.worst_relerr;
      slot = std::min(slot, tracker.worst_relerr_gap());
      for (double x : tracker.w_block()) s.max_w_block = std::max(s.max_w_block, x);
      ++s.runs;
    }
  }
  return s;
}

Outcome lyapunov_descent(const FeasibleSummary& s) {
  const bool ok = s.feasible && s.worst_increase <= 1e-6 && s.worst_descent >= -1e-6;
  return {ok ? Verdict::pass : Verdict::fail,
          std::to_string(s.runs) + " runs (lambda=0.5, rho=0.165, b=L=0.05, m=10), feasible=" +
              (s.feasible ? "yes" : "no") + ", worst scaled increase " + fmt(s.worst_increase) +
              ", worst descent slack " + fmt(s.worst_descent)};
}

Outcome relative_error(const FeasibleSummary& s, const ClosedFormRun& r) {
  const double wb = std::max(s.max_w_block, r.max_w_block);
  const bool ok = s.worst_relerr >= -1e-6 && wb <= 1e-10;
  return {ok ? Verdict::pass : Verdict::fail,
          "worst relerr gap " + fmt(s.worst_relerr) + " (full participation; partial gives " +
              fmt(s.worst_relerr_partial) + ", outside the bound's assumptions), max w-block " + fmt(wb)};
}

// ---------------------------------------------------------------------------------------------
// 7. One-round regression oracle.

Outcome oracle_equivalence() {
  const std::size_t m = 10, d = 20;
  const auto thetas = oracle_thetas(m, d, 1.0, 0.5, 41);
  int checks = 0, bad = 0, implications = 0;
  double worst_z = 0.0, min_threshold = std::numeric_limits<double>::infinity(), q_at_default = 0.0;
  for (std::size_t ma : {2u, 5u}) {
    for (AttackKind kind : {AttackKind::same_value, AttackKind::sign_flip, AttackKind::gaussian}) {
      LinRegWorld w;
      w.m = m;
      w.m_a = ma;
      w.N = 5;
      w.d = d;
      w.b = 1.0;
      w.sigma = 1.0;
      w.gamma = 0.1;
      w.lambda = 1.0;
      w.rho = w.lambda / static_cast<double>(m);
      w.theta = thetas;
      const auto rep = attack_losses(w, kind);
      min_threshold = std::min({min_threshold, rep.threshold.gm, rep.threshold.pm});
      q_at_default = rep.q;
      const auto mc = monte_carlo_losses(w, kind, rep.q, 10000, 1000 + ma, true);
      const double zg = std::abs(mc.mean.gm - rep.flame.gm) / mc.stderr_.gm;
      const double zp = std::abs(mc.mean.pm - rep.flame.pm) / mc.stderr_.pm;
      worst_z = std::max({worst_z, zg, zp});
      checks += 2;
      bad += (zg > 3.0) + (zp > 3.0);
      // The implication is also exercised away from rho = lambda/m, where q can reach the window.
      for (int k = 0; k <= 60; ++k) {
        LinRegWorld v = w;
        v.rho = w.rho * std::pow(10.0, -3.0 + 4.0 * k / 60.0);
        const auto r = k == 45 ? rep : attack_losses(v, kind);  // k = 45 is rho = lambda/m
        if (r.gm_threshold_met) {
          ++implications;
          bad += !r.gm_not_worse;
        }
        if (r.pm_threshold_met) {
          ++implications;
          bad += !r.pm_not_worse;
        }
      }
    }
  }
  return {bad == 0 ? Verdict::pass : Verdict::fail,
          std::to_string(checks) + " Monte Carlo comparisons (worst |z| " + fmt(worst_z) + "), " +
              std::to_string(implications) + " threshold implications over a rho grid (q=" + fmt(q_at_default) +
              " at rho=lambda/m, smallest minimiser " + fmt(min_threshold) + "), " + std::to_string(bad) +
              " failures"};
}

// ---------------------------------------------------------------------------------------------
// 8. Fairness on equal-norm parameter sets.

double direct_variance(const std::vector<ParamVector>& th, double q) {
  ParamVector bar = ParamVector::Zero(th.front().size());
  for (const auto& t : th) bar += t;
  bar /= static_cast<double>(th.size());
  std::vector<double> e;
  for (const auto& t : th) e.push_back((q * bar - t).squaredNorm());
  const double mean = std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size());
  double v = 0.0;
  for (double x : e) v += (x - mean) * (x - mean);
  return v / static_cast<double>(e.size());
}

Outcome fairness() {
  int violations = 0;
  double worst_ratio_err = 0.0, min_deriv = 1e300;
  for (int set = 0; set < 20; ++set) {
    std::mt19937_64 rng(500 + set);
    std::normal_distribution<double> n01;
    std::vector<ParamVector> th;
    for (int i = 0; i < 10; ++i) {
      ParamVector t(20);
      for (auto& x : t) x = n01(rng);
      th.push_back(t / t.norm());
    }
    const auto one = fairness_variances(th, 1.0, 1.0, 1.0);
    min_deriv = std::min(min_deriv, one.dvar_dq);
    violations += one.dvar_dq < 0;
    const double direct_one = direct_variance(th, 1.0);
    for (int k = 1; k <= 9; ++k) {
      const double q = 0.1 * k;
      const auto f = fairness_variances(th, 1.0, 1.0, q);
      violations += (f.var_gm > one.var_gm) + (f.var_pm > one.var_pm);
      const double expected = direct_variance(th, q) / direct_one;
      worst_ratio_err = std::max(worst_ratio_err, std::abs(f.var_gm / one.var_gm - expected));
    }
  }
  const bool ok = violations == 0 && worst_ratio_err <= 1e-9;
  return {ok ? Verdict::pass : Verdict::fail,
          "20 sets x 9 q values, " + std::to_string(violations) + " violations, min derivative at q=1 " +
              fmt(min_deriv) + ", max deviation from direct variance ratio " + fmt(worst_ratio_err)};
}

// ---------------------------------------------------------------------------------------------
// 9. Hybrid model selection on hybrid-skew data.

Outcome hybrid_model() {
  ExperimentConfig cfg;
  cfg.dataset.kind = DatasetKind::synth_classification;
  cfg.dataset.m = 10;
  cfg.dataset.n_per_client = 200;
  cfg.dataset.d = 20;
  cfg.dataset.classes = 10;
  cfg.dataset.separation = 3.0;
  cfg.partition.scheme = PartitionScheme::hybrid;
  cfg.partition.q = 2;
  cfg.partition.beta = 0.5;
  cfg.model = ModelKind::logistic;
  cfg.hp.lambda = 1.0;
  cfg.hp.rho = 0.1;
  cfg.hp.eta = 0.1;
  cfg.hp.H = 5;
  cfg.hp.batch_size = 20;
  cfg.hp.T = 30;
  cfg.hp.allow_infeasible = true;
  cfg.eval_every = 30;
  cfg.diagnostics = false;

  int mismatches = 0;
  double pm = 0, gm = 0, hm = 0;
  const int seeds = 5;
  for (int seed = 1; seed <= seeds; ++seed) {
    const auto res = run_seed(cfg, static_cast<std::uint64_t>(seed));
    for (const auto& c : res.final.clients) {
      const double best = std::max(c.pm_val.acc, c.gm_val.acc);
      mismatches += c.hm_val.acc != best;
      const auto& chosen = c.hm_uses_pm ? c.pm : c.gm;
      mismatches += c.hm.acc != chosen.acc;
    }
    pm += res.final.pm.mean_acc / seeds;
    gm += res.final.gm.mean_acc / seeds;
    hm += res.final.hm.mean_acc / seeds;
  }
  const bool ok = mismatches == 0 && hm >= std::max(pm, gm) - 0.005;
  return {ok ? Verdict::pass : Verdict::fail,
          "mean test acc PM " + fmt(pm) + ", GM " + fmt(gm) + ", HM " + fmt(hm) + "; " +
              std::to_string(mismatches) + " selection mismatches"};
}

// ---------------------------------------------------------------------------------------------
// 10. Multi-round robustness ordering under SameValue.

Outcome robustness() {
  const std::size_t m = 10;
  // lambda < b lets q exceed 1, which is where the SameValue minimisers sit.
  const double lambda = 0.5, b = 1.0, gamma = 1.0;

  ExperimentConfig base;
  base.dataset.kind = DatasetKind::synth_linreg;
  base.dataset.m = m;
  base.dataset.N = 20;
  base.dataset.d = 10;
  base.dataset.b = b;
  base.dataset.sigma = 0.5;
  base.dataset.theta.mode = ThetaMode::gaussian;
  base.dataset.theta.center_scale = 1.0;
  base.dataset.theta.spread = 0.5;
  base.model = ModelKind::linreg;
  base.hp.lambda = lambda;
  base.hp.eta = 1.0 / (b + lambda);
  base.hp.H = 1;
  base.hp.batch_size = 0;
  base.hp.T = 50;
  base.hp.allow_infeasible = true;
  base.eval_every = 50;
  base.diagnostics = false;
  base.attack.gamma = gamma;

  // Aim q at the middle of the window between 1 and the smallest one-round minimiser over the
  // attacked fractions; q = (2 lambda alpha / (lambda alpha + rho)) (b / (b + lambda)) is inverted for rho.
  LinRegWorld world;
  world.m = m;
  world.N = base.dataset.N;
  world.d = base.dataset.d;
  world.b = b;
  world.sigma = base.dataset.sigma;
  world.lambda = lambda;
  world.gamma = gamma;
  world.theta = oracle_thetas(m, world.d, 1.0, 0.5, 7);
  double q_hi = std::numeric_limits<double>::infinity();
  world.rho = lambda / static_cast<double>(m);
  for (std::size_t ma : {2u, 5u}) {
    world.m_a = ma;
    const auto rep = attack_losses(world, AttackKind::same_value);
    q_hi = std::min({q_hi, rep.threshold.gm, rep.threshold.pm});
  }
  const double la = lambda / static_cast<double>(m), shrink = b / (b + lambda);
  const double q_target = std::min(0.5 * (1.0 + q_hi), 2.0 * shrink * 0.999);
  const double rho = la * (2.0 * shrink / q_target - 1.0);
  if (!(q_hi > 1.0) || !(rho > 0.0)) return {Verdict::fail, "no rho puts q between 1 and the one-round minimisers"};
  world.rho = rho;
  for (std::size_t ma : {2u, 5u}) {
    world.m_a = ma;
    const auto rep = attack_losses(world, AttackKind::same_value);
    if (!rep.gm_threshold_met || !rep.pm_threshold_met) return {Verdict::fail, "chosen rho misses a q-threshold"};
  }
  world.rho = rho;
  const double q = world.q();
  base.hp.rho = rho;

  auto benign_mean = [](const SeedResult& r, const std::vector<bool>& benign) {
    double s = 0;
    int n = 0;
    for (std::size_t i = 0; i < benign.size(); ++i)
      if (benign[i]) s += r.final.clients[i].pm.loss, ++n;
    return s / n;
  };

  std::ostringstream os;
  os << "rho=" << fmt(rho) << " (q=" << fmt(q) << ")";
  bool ok = true;
  for (double fraction : {0.0, 0.2, 0.5}) {
    int wins = 0;
    double mean_deg[3] = {0, 0, 0};
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      double deg[3];
      for (int alg = 0; alg < 3; ++alg) {
        ExperimentConfig clean = base;
        if (alg == 1) clean.hp.mode = Mode::pfedme;
        if (alg == 2) clean.algorithm = Algorithm::ditto;
        ExperimentConfig attacked = clean;
        attacked.attack.kind = AttackKind::same_value;
        attacked.attack.fraction = fraction;
        const auto benign = build_federation(attacked, seed).benign;
        deg[alg] = benign_mean(run_seed(attacked, seed), benign) - benign_mean(run_seed(clean, seed), benign);
        mean_deg[alg] += deg[alg] / 5;
      }
      wins += deg[0] <= deg[1] + 1e-12 && deg[0] <= deg[2] + 1e-12;
    }
    ok = ok && wins >= 3;
    os << "; f=" << fraction << ": FLAME/pFedMe/Ditto degradation " << fmt(mean_deg[0]) << "/"
       << fmt(mean_deg[1]) << "/" << fmt(mean_deg[2]) << ", wins " << wins << "/5";
  }
  return {ok ? Verdict::pass : Verdict::fail, os.str()};
}

// ---------------------------------------------------------------------------------------------
// 11. Partitioner properties.

Outcome partitioner_properties() {
  std::vector<std::string> failures;
  const auto data = synth_classification(10, 1000, 5, 10, 2.0, 3);  // 10^4 samples
  const auto pool = all_indices(data.size());

  auto disjoint_cover = [&](const Partition& p) {
    std::vector<int> seen(data.size(), 0);
    for (const auto& l : p.client_indices) {
      if (l.empty()) return false;
      for (auto i : l) ++seen[i];
    }
    return std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
  };
  const std::vector<std::pair<std::string, std::function<Partition(std::uint64_t)>>> schemes = {
      {"quantity_label", [&](std::uint64_t s) { return quantity_label(data, pool, 10, 2, s); }},
      {"dirichlet_label", [&](std::uint64_t s) { return dirichlet_label(data, pool, 10, 0.5, s); }},
      {"quality", [&](std::uint64_t s) { return quality_skew(data, pool, 10, 0.1, s).first; }},
      {"quantity", [&](std::uint64_t s) { return quantity_skew(data, pool, 10, 0.5, s); }},
      {"hybrid", [&](std::uint64_t s) { return hybrid_skew(data, pool, 10, 2, 0.5, s); }},
  };
  for (const auto& [name, make] : schemes) {
    const auto a = make(9), b = make(9);
    if (!disjoint_cover(a)) failures.push_back(name + " cover");
    if (a.client_indices != b.client_indices) failures.push_back(name + " determinism");
  }

  // beta -> infinity: class proportions and client sizes near uniform.
  double worst_label = 0.0, worst_size = 0.0;
  const auto dl = dirichlet_label(data, pool, 10, 1e6, 4);
  for (const auto& l : dl.client_indices) {
    std::vector<double> counts(10, 0.0);
    for (auto i : l) counts[static_cast<std::size_t>(data.labels[i])] += 1.0;
    for (double c : counts) worst_label = std::max(worst_label, std::abs(c / l.size() - 0.1) / 0.1);
  }
  const auto qs = quantity_skew(data, pool, 10, 1e6, 4);
  for (const auto& l : qs.client_indices)
    worst_size = std::max(worst_size, std::abs(static_cast<double>(l.size()) / 1000.0 - 1.0));
  if (worst_label > 0.05) failures.push_back("dirichlet concentration");
  if (worst_size > 0.05) failures.push_back("quantity concentration");

  // Quality skew: sample variance of the injected noise.
  const auto [qp, noisy] = quality_skew(data, pool, 10, 0.1, 8);
  auto noise_var = [&, &qp = qp, &noisy = noisy](std::size_t c, double* se) {
    std::vector<double> e;
    for (auto i : qp.client_indices[c]) {
      const auto r = static_cast<Eigen::Index>(i);
      for (Eigen::Index j = 0; j < data.features.cols(); ++j)
        e.push_back(noisy.features(r, j) - data.features(r, j));
    }
    double s2 = 0.0, s4 = 0.0;
    for (double x : e) s2 += x * x, s4 += x * x * x * x;
    const double n = static_cast<double>(e.size());
    const double v = s2 / n;
    *se = std::sqrt((s4 / n - v * v) / n);
    return v;
  };
  double se10 = 0, se5 = 0;
  const double v10 = noise_var(9, &se10), v5 = noise_var(4, &se5);
  const double ratio = v10 / v5;
  const double ratio_se = ratio * std::sqrt(std::pow(se10 / v10, 2) + std::pow(se5 / v5, 2));
  if (std::abs(v10 - 0.1) > 3 * se10) failures.push_back("quality variance");
  if (std::abs(ratio - 2.0) > 3 * ratio_se) failures.push_back("quality ratio");

  std::string detail = "label dev " + fmt(worst_label) + ", size dev " + fmt(worst_size) + ", client-10 var " +
                       fmt(v10) + ", ratio " + fmt(ratio);
  for (const auto& f : failures) detail += "; failed: " + f;
  return {failures.empty() ? Verdict::pass : Verdict::fail, detail};
}

// ---------------------------------------------------------------------------------------------
// 12. Optional MNIST smoke run.

Outcome mnist_smoke() {
  std::vector<std::filesystem::path> dirs;
  if (const char* env = std::getenv("FLAME_MNIST_DIR")) dirs.emplace_back(env);
  dirs.emplace_back("data/mnist");
  dirs.emplace_back("data");
  std::filesystem::path images, labels;
  for (const auto& dir : dirs) {
    if (std::filesystem::exists(dir / "train-images-idx3-ubyte") &&
        std::filesystem::exists(dir / "train-labels-idx1-ubyte")) {
      images = dir / "train-images-idx3-ubyte";
      labels = dir / "train-labels-idx1-ubyte";
      break;
    }
  }
  if (images.empty()) return {Verdict::skip, "MNIST IDX files not found (set FLAME_MNIST_DIR)"};

  ExperimentConfig cfg;
  cfg.dataset.kind = DatasetKind::idx;
  cfg.dataset.m = 10;
  cfg.dataset.images = images;
  cfg.dataset.labels = labels;
  cfg.dataset.max_samples = 5000;
  cfg.partition.scheme = PartitionScheme::dirichlet_label;
  cfg.partition.beta = 0.5;
  cfg.model = ModelKind::mlp;
  cfg.hp.lambda = 1.0;
  cfg.hp.rho = 0.1;
  cfg.hp.eta = 0.05;
  cfg.hp.H = 5;
  cfg.hp.batch_size = 32;
  cfg.hp.T = 50;
  cfg.hp.allow_infeasible = true;
  cfg.hp.threads = 4;
  cfg.eval_every = 50;
  cfg.diagnostics = false;
  const auto res = run_seed(cfg, 1);
  const auto& f = res.final;
  const bool finite = std::isfinite(f.pm.mean_loss) && std::isfinite(f.gm.mean_loss);
  return {finite && f.pm.mean_acc > f.gm.mean_acc ? Verdict::pass : Verdict::fail,
          "PM acc " + fmt(f.pm.mean_acc) + ", GM acc " + fmt(f.gm.mean_acc)};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {Verdict::fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::skip ? "SKIP" : "FAIL";
    failed += o.verdict == Verdict::fail;
    std::cout << "[" << tag << "] " << id << " " << name << ": " << o.detail << " (" << fmt(secs) << " s)"
              << std::endl;
  };

  report(1, "dual identity", dual_identity);
  ClosedFormRun cf;
  FeasibleSummary fs;
  report(2, "closed-form convergence", [&] {
    cf = closed_form_run();
    return closed_form(cf);
  });
  report(3, "degeneration equivalence", degenerations);
  report(4, "Lyapunov descent", [&] {
    fs = feasible_runs();
    return lyapunov_descent(fs);
  });
  report(5, "relative error bound", [&] { return relative_error(fs, cf); });
  report(6, "convergence rate", [&] { return rate(cf); });
  report(7, "oracle equivalence", oracle_equivalence);
  report(8, "fairness variance", fairness);
  report(9, "hybrid model", hybrid_model);
  report(10, "robustness ordering", robustness);
  report(11, "partitioner properties", partitioner_properties);
  report(12, "MNIST smoke run", mnist_smoke);
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
