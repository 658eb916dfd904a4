#include "flame/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "flame/error.hpp"
#include "flame/rng.hpp"

namespace flame {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ModelScore score(const LossModel& model, const ParamVector& theta, const IndexList& rows) {
  require(!rows.empty(), Errc::invalid_argument, "evaluate: empty evaluation set");
  ModelScore s;
  s.loss = model.rebind(rows).loss(theta);
  s.acc = model.is_classifier() ? accuracy(model, theta, rows) : kNaN;
  return s;
}

ParamVector lift(const RunState& st, const ParamVector& theta) {
  return st.projection.size() > 0 ? ParamVector(st.projection * theta) : theta;
}

std::string fmt(double x) {
  if (std::isnan(x)) return "";
  std::ostringstream os;
  os << std::setprecision(10) << x;
  return os.str();
}

}  // namespace

std::vector<EvalSplit> make_eval_splits(const std::vector<IndexList>& client_rows, double fraction,
                                        const std::vector<IndexList>& test_rows, std::uint64_t seed,
                                        std::vector<IndexList>* train_rows) {
  require(fraction > 0 && fraction < 1, Errc::invalid_argument, "validation fraction must be in (0, 1)");
  require(test_rows.size() == client_rows.size(), Errc::invalid_argument, "one test list per client");
  std::vector<EvalSplit> out(client_rows.size());
  if (train_rows) train_rows->assign(client_rows.size(), {});
  for (std::size_t i = 0; i < client_rows.size(); ++i) {
    IndexList rows = client_rows[i];
    require(rows.size() >= 2, Errc::invalid_argument, "client needs >= 2 rows to hold out validation");
    Rng rng = make_rng(seed, Stream::split, {i});
    std::shuffle(rows.begin(), rows.end(), rng);
    auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, rows.size() - 1);
    out[i].validation.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::sort(out[i].validation.begin(), out[i].validation.end());
    out[i].test = test_rows[i];
    if (train_rows) {
      (*train_rows)[i].assign(rows.begin() + static_cast<std::ptrdiff_t>(n_val), rows.end());
      std::sort((*train_rows)[i].begin(), (*train_rows)[i].end());
    }
  }
  return out;
}

double population_variance(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - mean) * (x - mean);
  return v / static_cast<double>(xs.size());
}

std::vector<ClientEval> evaluate(const RunState& state, const std::vector<LossModel>& models,
                                 const std::vector<EvalSplit>& splits, const std::vector<bool>& benign) {
  require(splits.size() == models.size(), Errc::invalid_argument, "evaluate: one split per client");
  std::vector<ClientEval> out(models.size());
  const bool gm_available = static_cast<std::size_t>(state.server.w.size()) == models.front().dim();
  for (std::size_t i = 0; i < models.size(); ++i) {
    auto& e = out[i];
    const auto& mdl = models[i];
    const auto& theta = state.clients[i].theta;
    e.benign = benign.empty() ? true : benign[i];
    e.pm = score(mdl, theta, splits[i].test);
    e.pm_val = score(mdl, theta, splits[i].validation);
    if (gm_available) {
      e.gm = score(mdl, state.server.w, splits[i].test);
      e.gm_val = score(mdl, state.server.w, splits[i].validation);
      e.hm_uses_pm = mdl.is_classifier() ? e.pm_val.acc >= e.gm_val.acc : e.pm_val.loss <= e.gm_val.loss;
    } else {
      // The global model lives in the projected space and has no predictor of its own.
      e.gm = e.gm_val = ModelScore{kNaN, kNaN};
      e.hm_uses_pm = true;
    }
    e.hm = e.hm_uses_pm ? e.pm : e.gm;
    e.hm_val = e.hm_uses_pm ? e.pm_val : e.gm_val;
  }
  return out;
}

ModelSummary summarize(const std::vector<ClientEval>& clients, ModelScore ClientEval::*which) {
  ModelSummary s;
  std::vector<double> losses;
  double nb = 0.0;
  for (const auto& c : clients) {
    const auto& sc = c.*which;
    losses.push_back(sc.loss);
    s.mean_loss += sc.loss;
    s.mean_acc += sc.acc;
    if (c.benign) {
      s.benign_loss += sc.loss;
      s.benign_acc += sc.acc;
      nb += 1.0;
    }
  }
  const auto n = static_cast<double>(clients.size());
  s.mean_loss /= n;
  s.mean_acc /= n;
  s.benign_loss = nb > 0 ? s.benign_loss / nb : kNaN;
  s.benign_acc = nb > 0 ? s.benign_acc / nb : kNaN;
  s.loss_var = population_variance(losses);
  return s;
}

double lagrangian(const RunState& state, const std::vector<LossModel>& models, const HyperParams& hp) {
  const auto& w = state.server.w;
  double total = 0.0;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& c = state.clients[i];
    const ParamVector gap = lift(state, c.theta) - c.w_local;
    total += c.alpha * (models[i].loss(c.theta) + 0.5 * hp.lambda * gap.squaredNorm());
    total += c.pi.dot(c.w_local - w) + 0.5 * hp.rho * (c.w_local - w).squaredNorm();
  }
  return total;
}

double lyapunov(const RunState& state, const std::vector<LossModel>& models, const HyperParams& hp,
                const std::vector<double>& iota) {
  double total = lagrangian(state, models, hp);
  for (std::size_t i = 0; i < state.clients.size(); ++i) total += iota.at(i) * state.clients[i].eps;
  return total;
}

GradBlocks lyapunov_grad_sq(const RunState& state, const std::vector<LossModel>& models,
                            const HyperParams& hp) {
  GradBlocks g;
  const auto& w = state.server.w;
  ParamVector gw = ParamVector::Zero(w.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& c = state.clients[i];
    const ParamVector gap = lift(state, c.theta) - c.w_local;
    ParamVector pen = hp.lambda * gap;
    if (state.projection.size() > 0) pen = state.projection.transpose() * pen;
    g.theta += (c.alpha * (models[i].grad(c.theta) + pen)).squaredNorm();
    g.w_local += (-c.alpha * hp.lambda * gap + c.pi + hp.rho * (c.w_local - w)).squaredNorm();
    g.pi += (c.w_local - w).squaredNorm();
    gw -= c.pi + hp.rho * (c.w_local - w);
  }
  g.w = gw.squaredNorm();
  return g;
}

double delta_gamma(const RunState& prev, const RunState& next) {
  const double dw = (next.server.w - prev.server.w).squaredNorm();
  double total = 0.0;
  for (std::size_t i = 0; i < next.clients.size(); ++i) {
    total += dw;
    total += (next.clients[i].w_local - prev.clients[i].w_local).squaredNorm();
    total += (next.clients[i].theta - prev.clients[i].theta).squaredNorm();
  }
  return total;
}

double descent_gap(double lyap_t, double lyap_next, double D1, double delta_gamma_next) {
  return (lyap_t - lyap_next) - D1 * delta_gamma_next;
}

double relerr_gap(double grad_sq_t, double D2, double delta_gamma_next, double eps_sum_next) {
  return D2 * (delta_gamma_next + eps_sum_next) - grad_sq_t;
}

double rate_fit(const std::vector<double>& running_avg, double floor, int t_min, int t_max) {
  require(running_avg.size() >= 20, Errc::invalid_argument, "rate_fit: need at least 20 rounds");
  std::vector<double> xs, ys;
  for (std::size_t k = 0; k < running_avg.size(); ++k) {
    const auto T = static_cast<int>(k + 1);
    if (T < t_min || T > t_max) continue;
    const double excess = running_avg[k] - floor;
    require(excess > 0, Errc::invalid_argument,
            "rate_fit: running average at T=" + std::to_string(T) + " is not above the floor");
    xs.push_back(std::log(static_cast<double>(T)));
    ys.push_back(std::log(excess));
  }
  require(xs.size() >= 2, Errc::invalid_argument, "rate_fit: too few rounds in the fit window");
  const auto n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i], my += ys[i];
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

double eps_sum(const RunState& state) {
  double s = 0.0;
  for (const auto& c : state.clients) s += c.eps;
  return s;
}

DiagnosticsTracker::DiagnosticsTracker(const std::vector<LossModel>& models, const HyperParams& hp)
    : models_(models), hp_(hp) {
  const auto alphas = client_alphas(models, hp.alpha);
  report_ = check_feasibility(hp, alphas);
  for (const auto& c : report_.clients) iota_.push_back(c.iota);
}

void DiagnosticsTracker::observe(const RunState& state) {
  MetricsRecord rec;
  rec.round = state.server.round;
  rec.lyapunov = lyapunov(state, models_, hp_, iota_);
  const auto blocks = lyapunov_grad_sq(state, models_, hp_);
  rec.grad_sq = blocks.total();
  w_block_.push_back(blocks.w);
  if (rec.round >= 1) grad_sum_ += rec.grad_sq;
  rec.mean_sq_grad = rec.round >= 1 ? grad_sum_ / rec.round : rec.grad_sq;

  if (have_prev_) {
    auto& last = records_.back();
    const double dg = delta_gamma(prev_, state);
    last.descent_gap = descent_gap(last.lyapunov, rec.lyapunov, report_.D1, dg);
    last.relerr_gap = relerr_gap(last.grad_sq, report_.D2, dg, eps_sum(state));
  }
  records_.push_back(rec);
  prev_ = state;
  have_prev_ = true;
}

double DiagnosticsTracker::worst_descent_slack() const {
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t + 1 < records_.size(); ++t)
    worst = std::min(worst, records_[t].descent_gap / (1.0 + std::abs(records_[t].lyapunov)));
  return worst;
}

double DiagnosticsTracker::worst_relerr_gap() const {
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t + 1 < records_.size(); ++t) worst = std::min(worst, records_[t].relerr_gap);
  return worst;
}

bool DiagnosticsTracker::lyapunov_monotone(double rel_tol) const {
  for (std::size_t t = 0; t + 1 < records_.size(); ++t)
    if (records_[t + 1].lyapunov > records_[t].lyapunov + rel_tol * (1.0 + std::abs(records_[t].lyapunov)))
      return false;
  return true;
}

void write_csv_header(std::ostream& os) {
  os << "run_id,round,client,model,mode,loss,acc,benign,loss_var,lyapunov,mean_sq_grad\n";
}

void write_csv_rows(std::ostream& os, const std::string& run_id, const std::string& mode,
                    const MetricsRecord& rec) {
  const std::pair<const char*, ModelScore ClientEval::*> models[] = {
      {"PM", &ClientEval::pm}, {"GM", &ClientEval::gm}, {"HM", &ClientEval::hm}};
  for (std::size_t i = 0; i < rec.clients.size(); ++i)
    for (const auto& [name, member] : models) {
      const auto& sc = rec.clients[i].*member;
      os << run_id << ',' << rec.round << ',' << i << ',' << name << ',' << mode << ',' << fmt(sc.loss)
         << ',' << fmt(sc.acc) << ',' << (rec.clients[i].benign ? 1 : 0) << ",,,\n";
    }
  const std::pair<const char*, const ModelSummary*> sums[] = {
      {"PM", &rec.pm}, {"GM", &rec.gm}, {"HM", &rec.hm}};
  for (const auto& [name, s] : sums) {
    os << run_id << ',' << rec.round << ",all," << name << ',' << mode << ',' << fmt(s->mean_loss) << ','
       << fmt(s->mean_acc) << ",," << fmt(s->loss_var) << ',' << fmt(rec.lyapunov) << ','
       << fmt(rec.mean_sq_grad) << '\n';
    os << run_id << ',' << rec.round << ",benign," << name << ',' << mode << ',' << fmt(s->benign_loss)
       << ',' << fmt(s->benign_acc) << ",1,,,\n";
  }
}

nlohmann::json record_to_json(const MetricsRecord& rec) {
  auto sum = [](const ModelSummary& s) {
    auto num = [](double x) { return std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x); };
    return nlohmann::json{{"mean_loss", num(s.mean_loss)}, {"mean_acc", num(s.mean_acc)},
                          {"loss_var", num(s.loss_var)},   {"benign_loss", num(s.benign_loss)},
                          {"benign_acc", num(s.benign_acc)}};
  };
  return {{"round", rec.round},         {"PM", sum(rec.pm)},         {"GM", sum(rec.gm)},
          {"HM", sum(rec.hm)},          {"lyapunov", rec.lyapunov},  {"grad_sq", rec.grad_sq},
          {"mean_sq_grad", rec.mean_sq_grad}};
}

}  // namespace flame
