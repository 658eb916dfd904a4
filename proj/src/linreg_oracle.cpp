#include "flame/linreg_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "flame/error.hpp"

namespace flame {

double LinRegWorld::q() const {
  const double la = lambda * alpha();
  return (2.0 * la / (la + rho)) * (b / (b + lambda));
}

void LinRegWorld::validate() const {
  require(m >= 1 && m_a <= m, Errc::invalid_argument, "world: need 0 <= m_a <= m, m >= 1");
  require(N >= 1 && d >= 1, Errc::invalid_argument, "world: N and d must be positive");
  require(b > 0 && lambda > 0 && rho > 0, Errc::invalid_argument, "world: b, lambda, rho must be positive");
  require(sigma >= 0 && gamma >= 0, Errc::invalid_argument, "world: sigma, gamma must be nonnegative");
  require(theta.size() == m, Errc::invalid_argument, "world: need one theta per client");
  for (const auto& t : theta)
    require(static_cast<std::size_t>(t.size()) == d, Errc::dimension_mismatch, "world: theta has wrong dimension");
}

ExactSolution exact_solution(const std::vector<ParamVector>& theta_hats, double b, double lambda) {
  return exact_solution(theta_hats, std::vector<double>(theta_hats.size(), b), lambda);
}

ExactSolution exact_solution(const std::vector<ParamVector>& theta_hats, const std::vector<double>& b,
                             double lambda) {
  require(!theta_hats.empty() && b.size() == theta_hats.size(), Errc::invalid_argument,
          "exact_solution: need one b per client");
  ExactSolution s;
  s.w = ParamVector::Zero(theta_hats.front().size());
  double denom = 0.0;
  for (std::size_t i = 0; i < theta_hats.size(); ++i) {
    const double c = b[i] / (b[i] + lambda);
    s.w += c * theta_hats[i];
    denom += c;
  }
  s.w /= denom;
  for (std::size_t i = 0; i < theta_hats.size(); ++i)
    s.theta.push_back((b[i] * theta_hats[i] + lambda * s.w) / (b[i] + lambda));
  return s;
}

namespace {

ParamVector mean_theta(const std::vector<ParamVector>& theta) {
  ParamVector s = ParamVector::Zero(theta.front().size());
  for (const auto& t : theta) s += t;
  return s / static_cast<double>(theta.size());
}

}  // namespace

LossPair expected_losses(const LinRegWorld& world) {
  world.validate();
  const double m = static_cast<double>(world.m), b = world.b, lam = world.lambda;
  const double s2 = world.sigma * world.sigma, d = static_cast<double>(world.d), N = static_cast<double>(world.N);
  const ParamVector bar = mean_theta(world.theta);
  double spread = 0.0;
  for (const auto& t : world.theta) spread += (bar - t).squaredNorm();
  LossPair out;
  out.gm = s2 / 2 + s2 * d / (2 * m * N) + b / (2 * m) * spread;
  out.pm = s2 / 2 + (m * b * b + 2 * b * lam + lam * lam) / (m * (b + lam) * (b + lam)) * s2 * d / (2 * N) +
           b * lam * lam / (2 * m * (b + lam) * (b + lam)) * spread;
  return out;
}

LossPair benign_losses(const LinRegWorld& world, AttackKind kind, double q) {
  world.validate();
  require(world.m_b() >= 1, Errc::invalid_argument, "benign_losses: no benign clients");
  const double m = static_cast<double>(world.m), b = world.b, lam = world.lambda;
  const double d = static_cast<double>(world.d), s2 = world.theta_hat_var(), g2 = world.gamma * world.gamma;
  const std::size_t ma = kind == AttackKind::none ? 0 : world.m_a;
  const double mb_count = static_cast<double>(world.m - ma);

  // Mean of w and the malicious contribution to tr Cov(w) (times m^2).
  ParamVector mean_w = ParamVector::Zero(static_cast<Eigen::Index>(world.d));
  double mal_trace = 0.0;
  for (std::size_t i = 0; i < world.m; ++i) {
    const auto& th = world.theta[i];
    if (i >= ma || kind == AttackKind::none) {
      mean_w += q * th;
      continue;
    }
    switch (kind) {
      case AttackKind::same_value:
      case AttackKind::gaussian:
        mal_trace += g2 * d;  // tr(1 1^T) = tr(I) = d
        break;
      case AttackKind::sign_flip: {
        const double noise = world.sign_flip_bm ? world.sigma * world.sigma / (b * m) : s2;
        mean_w -= std::sqrt(2.0 / std::numbers::pi) * world.gamma * q * th;
        mal_trace += q * q * ((std::numbers::pi - 2.0) / std::numbers::pi * g2 * th.squaredNorm() + g2 * noise * d);
        break;
      }
      default:
        throw Error(Errc::invalid_argument, "benign_losses: unsupported attack kind");
    }
  }
  mean_w /= m;
  const double benign_trace = q * q * mb_count * s2 * d;  // from the benign theta_hats
  const double trace_w = (benign_trace + mal_trace) / (m * m);

  LossPair out;
  double gm_bias = 0.0, pm_bias = 0.0;
  for (std::size_t i = ma; i < world.m; ++i) {
    gm_bias += (mean_w - world.theta[i]).squaredNorm();
    pm_bias += (lam / (b + lam) * (mean_w - world.theta[i])).squaredNorm();
  }
  gm_bias /= mb_count;
  pm_bias /= mb_count;

  // PM noise: the client's own theta_hat enters with weight (b + lambda q / m)/(b + lambda),
  // every other benign one with lambda q / (m (b + lambda)).
  const double own = (b + lam * q / m) / (b + lam);
  const double other = lam / (b + lam);
  const double pm_trace = own * own * s2 * d +
                          other * other * (q * q * (mb_count - 1.0) * s2 * d + mal_trace) / (m * m);

  const double s_test = world.sigma * world.sigma / 2.0;
  out.gm = s_test + b / 2.0 * (trace_w + gm_bias);
  out.pm = s_test + b / 2.0 * (pm_trace + pm_bias);
  return out;
}

AttackLossReport attack_losses(const LinRegWorld& world, AttackKind kind) {
  AttackLossReport r;
  r.q = world.q();
  r.flame = benign_losses(world, kind, r.q);
  r.reference = benign_losses(world, kind, 1.0);

  // Both losses are quadratics in q; recover coefficients from three evaluations.
  const LossPair l0 = benign_losses(world, kind, 0.0);
  const LossPair l2 = benign_losses(world, kind, 2.0);
  auto argmin = [](double f0, double f1, double f2) {
    const double a2 = (f2 - 2.0 * f1 + f0) / 2.0;
    const double a1 = f1 - f0 - a2;
    return a2 > 0 ? -a1 / (2.0 * a2) : std::numeric_limits<double>::quiet_NaN();
  };
  r.threshold.gm = argmin(l0.gm, r.reference.gm, l2.gm);
  r.threshold.pm = argmin(l0.pm, r.reference.pm, l2.pm);
  // A convex quadratic is no larger at q than at 1 whenever q lies between 1 and the minimiser.
  auto between = [](double q, double t) { return std::isfinite(t) && q >= std::min(t, 1.0) && q <= std::max(t, 1.0); };
  r.gm_threshold_met = between(r.q, r.threshold.gm);
  r.pm_threshold_met = between(r.q, r.threshold.pm);
  r.gm_not_worse = r.flame.gm <= r.reference.gm;
  r.pm_not_worse = r.flame.pm <= r.reference.pm;
  return r;
}

LossPair ditto_pfedme_losses(const LinRegWorld& world, AttackKind kind) {
  return benign_losses(world, kind, 1.0);
}

std::vector<ParamVector> draw_theta_hats(const LinRegWorld& world, Rng& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(world.theta_hat_var()));
  std::vector<ParamVector> out;
  out.reserve(world.m);
  for (const auto& t : world.theta) {
    ParamVector h = t;
    for (Eigen::Index k = 0; k < h.size(); ++k) h[k] += normal(rng);
    out.push_back(std::move(h));
  }
  return out;
}

OneRoundResult one_round_protocol(const LinRegWorld& world, const std::vector<ParamVector>& theta_hats,
                                  AttackKind kind, Rng& rng, double q) {
  require(theta_hats.size() == world.m, Errc::invalid_argument, "one_round: need m estimates");
  OneRoundResult r;
  r.w = ParamVector::Zero(static_cast<Eigen::Index>(world.d));
  for (std::size_t i = 0; i < world.m; ++i) {
    const ParamVector honest = q * theta_hats[i];
    const bool bad = kind != AttackKind::none && i < world.m_a;
    r.w += bad ? corrupt_message(kind, honest, world.gamma, rng) : honest;
  }
  r.w /= static_cast<double>(world.m);
  for (std::size_t i = 0; i < world.m; ++i)
    r.theta.push_back((world.b * theta_hats[i] + world.lambda * r.w) / (world.b + world.lambda));
  return r;
}

double expected_test_loss(const LinRegWorld& world, std::size_t i, const ParamVector& v) {
  return world.sigma * world.sigma / 2.0 + world.b / 2.0 * (v - world.theta[i]).squaredNorm();
}

double sampled_test_loss(const LinRegWorld& world, std::size_t i, const ParamVector& v, Rng& rng) {
  // f = (1/2N)||X delta - z||^2 with X^T X = N b I: (b/2)||delta||^2 - z^T X delta / N + ||z||^2/(2N).
  std::normal_distribution<double> normal(0.0, 1.0);
  const double N = static_cast<double>(world.N);
  const ParamVector delta = v - world.theta[i];
  const double cross = world.sigma * std::sqrt(world.b * delta.squaredNorm() / N) * normal(rng);
  double z2 = 0.0;
  for (std::size_t k = 0; k < world.N; ++k) {
    const double z = world.sigma * normal(rng);
    z2 += z * z;
  }
  return world.b / 2.0 * delta.squaredNorm() - cross + z2 / (2.0 * N);
}

MonteCarloEstimate monte_carlo_losses(const LinRegWorld& world, AttackKind kind, double q,
                                      std::size_t trials, std::uint64_t seed, bool sample_test_noise) {
  world.validate();
  require(trials >= 2, Errc::invalid_argument, "monte_carlo: need at least two trials");
  const std::size_t ma = kind == AttackKind::none ? 0 : world.m_a;
  double sg = 0, sgg = 0, sp = 0, spp = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = make_rng(seed, Stream::oracle, {t});
    const auto hats = draw_theta_hats(world, rng);
    const auto res = one_round_protocol(world, hats, kind, rng, q);
    double g = 0, p = 0;
    for (std::size_t i = ma; i < world.m; ++i) {
      g += sample_test_noise ? sampled_test_loss(world, i, res.w, rng) : expected_test_loss(world, i, res.w);
      p += sample_test_noise ? sampled_test_loss(world, i, res.theta[i], rng)
                             : expected_test_loss(world, i, res.theta[i]);
    }
    g /= static_cast<double>(world.m - ma);
    p /= static_cast<double>(world.m - ma);
    sg += g, sgg += g * g, sp += p, spp += p * p;
  }
  const double n = static_cast<double>(trials);
  MonteCarloEstimate e;
  e.trials = trials;
  e.mean.gm = sg / n;
  e.mean.pm = sp / n;
  e.stderr_.gm = std::sqrt(std::max(0.0, (sgg / n - e.mean.gm * e.mean.gm) * n / (n - 1)) / n);
  e.stderr_.pm = std::sqrt(std::max(0.0, (spp / n - e.mean.pm * e.mean.pm) * n / (n - 1)) / n);
  return e;
}

FairnessReport fairness_variances(const std::vector<ParamVector>& theta, double b, double lambda, double q) {
  require(!theta.empty(), Errc::invalid_argument, "fairness: empty theta set");
  const ParamVector bar = mean_theta(theta);
  const auto m = theta.size();
  std::vector<double> x(m);
  for (std::size_t i = 0; i < m; ++i) x[i] = (q * bar - theta[i]).squaredNorm();

  // Pairwise form of the population variance and its derivative in q.
  double var = 0.0, dvar = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      const double diff = x[i] - x[j];
      var += diff * diff / 2.0;
      dvar += 2.0 * diff * (theta[j] - theta[i]).dot(bar);
    }
  const double m2 = static_cast<double>(m * m);
  FairnessReport r;
  r.q = q;
  const double pop = var / m2;
  r.dvar_dq = dvar / m2;
  r.var_gm = b * b / 4.0 * pop;
  r.var_pm = r.var_gm * std::pow(lambda / (b + lambda), 4);
  return r;
}

nlohmann::json world_to_json(const LinRegWorld& world) {
  nlohmann::json thetas = nlohmann::json::array();
  for (const auto& t : world.theta) thetas.push_back(std::vector<double>(t.data(), t.data() + t.size()));
  return {{"m", world.m},         {"m_a", world.m_a},     {"N", world.N},
          {"d", world.d},         {"b", world.b},         {"sigma", world.sigma},
          {"lambda", world.lambda}, {"rho", world.rho},   {"gamma", world.gamma},
          {"q", world.q()},       {"sign_flip_bm", world.sign_flip_bm}, {"theta", thetas}};
}

nlohmann::json oracle_report_json(const LinRegWorld& world, AttackKind kind) {
  const auto r = attack_losses(world, kind);
  auto pair = [](const LossPair& p) { return nlohmann::json{{"gm", p.gm}, {"pm", p.pm}}; };
  return {{"world", world_to_json(world)},
          {"attack", attack_name(kind)},
          {"q", r.q},
          {"flame", pair(r.flame)},
          {"reference_q1", pair(r.reference)},
          {"threshold", pair(r.threshold)},
          {"gm_threshold_met", r.gm_threshold_met},
          {"pm_threshold_met", r.pm_threshold_met},
          {"gm_not_worse", r.gm_not_worse},
          {"pm_not_worse", r.pm_not_worse}};
}

}  // namespace flame
