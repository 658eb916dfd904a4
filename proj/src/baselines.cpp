#include "flame/baselines.hpp"

#include <algorithm>
#include <numeric>

#include "flame/error.hpp"

namespace flame {

namespace {

ParamVector mean_of(const std::vector<ParamVector>& v) {
  ParamVector s = ParamVector::Zero(v.front().size());
  for (const auto& x : v) s += x;
  return s / static_cast<double>(v.size());
}

ProxConfig base_config(const HyperParams& hp, std::uint64_t seed, std::size_t client, int round) {
  ProxConfig cfg;
  cfg.lambda = hp.lambda;
  cfg.eta = hp.eta;
  cfg.max_passes = hp.H;
  cfg.batch_size = hp.batch_size;
  cfg.seed = seed;
  cfg.client = client;
  cfg.round = static_cast<std::uint64_t>(round);
  return cfg;
}

}  // namespace

BaselineState pfedme_run(const HyperParams& hp, const std::vector<LossModel>& models,
                         std::uint64_t seed, const BaselineObserver& observe) {
  const std::size_t m = models.size();
  hp.validate(m);
  const auto alpha = client_alphas(models, hp.alpha);
  const std::size_t s = hp.s == 0 ? m : hp.s;

  BaselineState st;
  const ParamVector start = init_params(models.front(), seed);
  st.theta.assign(m, start);
  st.w_local.assign(m, start);
  st.eps.assign(m, hp.eps0);
  st.w = mean_of(st.w_local);
  if (observe) observe(st);

  for (int t = 0; t < hp.T; ++t) {
    for (auto i : select_clients(m, s, t, seed)) {
      auto cfg = base_config(hp, seed, i, t);
      cfg.alpha = alpha[i];
      cfg.eps_target = hp.v * st.eps[i];
      st.theta[i] = prox_solve(models[i], st.w_local[i], st.theta[i], cfg).theta;
      const double la = hp.lambda * alpha[i];
      st.w_local[i] = (la * st.theta[i] + hp.rho * st.w) / (la + hp.rho);
      st.eps[i] = hp.v * st.eps[i];
    }
    st.w = mean_of(st.w_local);
    st.round = t + 1;
    if (observe) observe(st);
  }
  return st;
}

BaselineState ditto_run(const HyperParams& hp, const std::vector<LossModel>& models,
                        std::uint64_t seed, const BaselineObserver& observe,
                        const std::function<ParamVector(std::size_t, int, const ParamVector&)>& upload) {
  const std::size_t m = models.size();
  require(m >= 1, Errc::config_invalid, "ditto: need at least one client");
  require(hp.eta > 0 && hp.H >= 1 && hp.lambda >= 0, Errc::config_invalid, "ditto: bad step settings");
  const std::size_t s = hp.s == 0 ? m : hp.s;

  BaselineState st;
  const ParamVector start = init_params(models.front(), seed);
  st.theta.assign(m, start);
  st.w_local.assign(m, start);
  st.eps.assign(m, 0.0);
  st.w = start;
  if (observe) observe(st);

  for (int t = 0; t < hp.T; ++t) {
    const ParamVector w_in = st.w;
    for (auto i : select_clients(m, s, t, seed)) {
      auto cfg = base_config(hp, seed, i, t);
      st.w_local[i] = local_sgd(models[i], w_in, cfg);
      if (upload) st.w_local[i] = upload(i, t, st.w_local[i]);

      // Personal phase draws its batches from a separate key.
      auto pcfg = base_config(hp, seed, i + (std::size_t{1} << 32), t);
      if (hp.lambda > 0) {
        pcfg.eps_target = -1.0;
        st.theta[i] = prox_solve(models[i], w_in, st.theta[i], pcfg).theta;
      } else {
        st.theta[i] = local_sgd(models[i], st.theta[i], pcfg);
      }
    }
    st.w = mean_of(st.w_local);
    st.round = t + 1;
    if (observe) observe(st);
  }
  return st;
}

KrumResult multi_krum(const std::vector<ParamVector>& updates, std::size_t f, std::size_t k) {
  const std::size_t m = updates.size();
  require(m >= f + 3, Errc::invalid_argument, "multi_krum: need m - f - 2 >= 1");
  require(k >= 1 && k <= m, Errc::invalid_argument, "multi_krum: need 1 <= k <= m");
  const std::size_t nb = m - f - 2;

  KrumResult out;
  out.scores.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> d;
    d.reserve(m - 1);
    for (std::size_t j = 0; j < m; ++j)
      if (j != i) d.push_back((updates[i] - updates[j]).squaredNorm());
    std::sort(d.begin(), d.end());
    out.scores[i] = std::accumulate(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(nb), 0.0);
  }
  IndexList order = all_positions(m);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.scores[a] < out.scores[b]; });
  out.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.selected.begin(), out.selected.end());

  out.aggregate = ParamVector::Zero(updates.front().size());
  for (auto i : out.selected) out.aggregate += updates[i];
  out.aggregate /= static_cast<double>(k);
  return out;
}

}  // namespace flame
