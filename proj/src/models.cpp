#include "flame/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "flame/error.hpp"
#include "flame/rng.hpp"

namespace flame {

namespace {

std::size_t net_param_count(const std::vector<int>& widths) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l)
    n += static_cast<std::size_t>(widths[l + 1]) * static_cast<std::size_t>(widths[l] + 1);
  return n;
}

void check_rows(const SampleStore& s, const IndexList& rows) {
  for (auto r : rows)
    require(r < static_cast<std::size_t>(s.features.rows()), Errc::invalid_argument,
            "model: row index out of range");
}

}  // namespace

LossModel LossModel::linreg(std::shared_ptr<const SampleStore> store, IndexList rows) {
  require(store != nullptr, Errc::invalid_argument, "model: null store");
  require(store->targets.size() == store->features.rows(), Errc::dimension_mismatch,
          "linreg: targets and features disagree");
  check_rows(*store, rows);
  LossModel m;
  m.kind_ = ModelKind::linreg;
  m.dim_ = static_cast<std::size_t>(store->features.cols());
  m.store_ = std::move(store);
  m.rows_ = std::move(rows);
  return m;
}

LossModel LossModel::logistic(std::shared_ptr<const SampleStore> store, IndexList rows) {
  auto m = mlp(std::move(store), std::move(rows), {});
  m.kind_ = ModelKind::logistic;
  return m;
}

LossModel LossModel::mlp(std::shared_ptr<const SampleStore> store, IndexList rows,
                         std::vector<int> hidden) {
  require(store != nullptr, Errc::invalid_argument, "model: null store");
  require(store->num_classes >= 2, Errc::invalid_argument, "classifier needs >= 2 classes");
  require(store->labels.size() == static_cast<std::size_t>(store->features.rows()),
          Errc::dimension_mismatch, "classifier: labels and features disagree");
  for (int h : hidden) require(h >= 1, Errc::invalid_argument, "mlp: hidden width must be >= 1");
  check_rows(*store, rows);
  LossModel m;
  m.kind_ = ModelKind::mlp;
  m.store_ = std::move(store);
  m.rows_ = std::move(rows);
  m.hidden_ = std::move(hidden);
  m.dim_ = net_param_count(m.layer_widths());
  return m;
}

LossModel LossModel::rebind(IndexList rows) const {
  check_rows(*store_, rows);
  LossModel m = *this;
  m.rows_ = std::move(rows);
  return m;
}

std::vector<int> LossModel::layer_widths() const {
  std::vector<int> w{static_cast<int>(store_->features.cols())};
  w.insert(w.end(), hidden_.begin(), hidden_.end());
  w.push_back(store_->num_classes);
  return w;
}

Matrix LossModel::gather(const IndexList& batch) const {
  Matrix X(static_cast<Eigen::Index>(batch.size()), store_->features.cols());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    require(batch[i] < rows_.size(), Errc::invalid_argument, "model: batch position out of range");
    X.row(static_cast<Eigen::Index>(i)) = store_->features.row(static_cast<Eigen::Index>(rows_[batch[i]]));
  }
  return X;
}

double LossModel::loss(const ParamVector& theta, const IndexList& batch) const {
  return loss_and_grad(theta, batch, nullptr);
}

double LossModel::loss(const ParamVector& theta) const {
  return loss(theta, all_positions(rows_.size()));
}

ParamVector LossModel::grad(const ParamVector& theta, const IndexList& batch) const {
  ParamVector g;
  loss_and_grad(theta, batch, &g);
  return g;
}

ParamVector LossModel::grad(const ParamVector& theta) const {
  return grad(theta, all_positions(rows_.size()));
}

double LossModel::loss_and_grad(const ParamVector& theta, const IndexList& batch, ParamVector* g) const {
  require(static_cast<std::size_t>(theta.size()) == dim_, Errc::dimension_mismatch,
          "model: parameter dimension " + std::to_string(theta.size()) + " != " + std::to_string(dim_));
  require(!batch.empty(), Errc::invalid_argument, "model: empty batch");
  return kind_ == ModelKind::linreg ? linreg_eval(theta, batch, g) : net_eval(theta, batch, g);
}

double LossModel::linreg_eval(const ParamVector& theta, const IndexList& batch, ParamVector* g) const {
  const Matrix X = gather(batch);
  Eigen::VectorXd y(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i)
    y[static_cast<Eigen::Index>(i)] = store_->targets[static_cast<Eigen::Index>(rows_[batch[i]])];
  const Eigen::VectorXd r = X * theta - y;
  const double n = static_cast<double>(batch.size());
  if (g) *g = X.transpose() * r / n;
  return 0.5 * r.squaredNorm() / n;
}

double LossModel::net_eval(const ParamVector& theta, const IndexList& batch, ParamVector* g) const {
  const auto widths = layer_widths();
  const std::size_t L = widths.size() - 1;
  const auto B = static_cast<Eigen::Index>(batch.size());

  // Layer l has weights W_l (out x in, row-major) followed by bias b_l.
  std::vector<Eigen::Map<const Matrix>> W;
  std::vector<Eigen::Map<const Eigen::VectorXd>> bias;
  std::size_t off = 0;
  for (std::size_t l = 0; l < L; ++l) {
    const Eigen::Index in = widths[l], out = widths[l + 1];
    W.emplace_back(theta.data() + off, out, in);
    off += static_cast<std::size_t>(out * in);
    bias.emplace_back(theta.data() + off, out);
    off += static_cast<std::size_t>(out);
  }

  std::vector<Matrix> acts{gather(batch)};
  for (std::size_t l = 0; l < L; ++l) {
    Matrix z = acts.back() * W[l].transpose();
    z.rowwise() += bias[l].transpose();
    if (l + 1 < L) z = z.cwiseMax(0.0);
    acts.push_back(std::move(z));
  }

  Matrix& logits = acts.back();
  double total = 0.0;
  Matrix delta(B, logits.cols());
  for (Eigen::Index i = 0; i < B; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    const double z = e.sum();
    const int y = store_->labels[rows_[batch[static_cast<std::size_t>(i)]]];
    total += std::log(z) - (logits(i, y) - mx);
    delta.row(i) = e / z;
    delta(i, y) -= 1.0;
  }
  const double n = static_cast<double>(B);
  if (!g) return total / n;

  g->setZero(static_cast<Eigen::Index>(dim_));
  delta /= n;
  for (std::size_t l = L; l-- > 0;) {
    const Eigen::Index in = widths[l], out = widths[l + 1];
    std::size_t w_off = 0;
    for (std::size_t k = 0; k < l; ++k)
      w_off += static_cast<std::size_t>(widths[k + 1]) * static_cast<std::size_t>(widths[k] + 1);
    Eigen::Map<Matrix> gW(g->data() + w_off, out, in);
    Eigen::Map<Eigen::VectorXd> gb(g->data() + w_off + static_cast<std::size_t>(out * in), out);
    gW = delta.transpose() * acts[l];
    gb = delta.colwise().sum().transpose();
    if (l > 0) {
      Matrix back = delta * W[l];
      // ReLU derivative; acts[l] holds post-activation values.
      delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
    }
  }
  return total / n;
}

Matrix LossModel::logits(const ParamVector& theta) const {
  require(is_classifier(), Errc::invalid_argument, "logits: regression model");
  const auto widths = layer_widths();
  Matrix a = gather(all_positions(rows_.size()));
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const Eigen::Index in = widths[l], out = widths[l + 1];
    Eigen::Map<const Matrix> W(theta.data() + off, out, in);
    off += static_cast<std::size_t>(out * in);
    Eigen::Map<const Eigen::VectorXd> b(theta.data() + off, out);
    off += static_cast<std::size_t>(out);
    Matrix z = a * W.transpose();
    z.rowwise() += b.transpose();
    if (l + 2 < widths.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

std::shared_ptr<SampleStore> make_regression_store(const std::vector<LinRegClientData>& clients,
                                                   std::vector<IndexList>* client_rows) {
  require(!clients.empty(), Errc::invalid_argument, "regression store: no clients");
  Eigen::Index total = 0;
  for (const auto& c : clients) total += c.X.rows();
  auto s = std::make_shared<SampleStore>();
  s->features.resize(total, clients.front().X.cols());
  s->targets.resize(total);
  if (client_rows) client_rows->clear();
  Eigen::Index at = 0;
  for (const auto& c : clients) {
    require(c.X.cols() == s->features.cols(), Errc::dimension_mismatch, "regression store: mixed d");
    s->features.middleRows(at, c.X.rows()) = c.X;
    s->targets.segment(at, c.X.rows()) = c.y;
    if (client_rows) {
      IndexList rows(static_cast<std::size_t>(c.X.rows()));
      std::iota(rows.begin(), rows.end(), static_cast<std::size_t>(at));
      client_rows->push_back(std::move(rows));
    }
    at += c.X.rows();
  }
  return s;
}

std::shared_ptr<SampleStore> make_classification_store(const LabeledDataset& data) {
  data.validate();
  auto s = std::make_shared<SampleStore>();
  s->features = data.features;
  s->labels = data.labels;
  s->num_classes = data.num_classes;
  return s;
}

ParamVector init_params(const LossModel& model, std::uint64_t seed) {
  ParamVector theta = ParamVector::Zero(static_cast<Eigen::Index>(model.dim()));
  if (model.kind() != ModelKind::mlp || model.hidden().empty()) return theta;

  std::vector<int> widths{static_cast<int>(model.store().features.cols())};
  widths.insert(widths.end(), model.hidden().begin(), model.hidden().end());
  widths.push_back(model.store().num_classes);
  Rng rng = make_rng(seed, Stream::init);
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    std::uniform_real_distribution<double> u(-bound, bound);
    const std::size_t count = static_cast<std::size_t>(widths[l + 1]) * static_cast<std::size_t>(widths[l] + 1);
    for (std::size_t k = 0; k < count; ++k) theta[static_cast<Eigen::Index>(off + k)] = u(rng);
    off += count;
  }
  return theta;
}

namespace {

ParamVector penalty_grad(const ParamVector& theta, const ParamVector& anchor, const ProxConfig& cfg) {
  if (cfg.projection) return cfg.lambda * cfg.projection->transpose() * (*cfg.projection * theta - anchor);
  return cfg.lambda * (theta - anchor);
}

void check_anchor(const LossModel& model, const ParamVector& anchor, const ProxConfig& cfg) {
  const auto want = cfg.projection ? static_cast<std::size_t>(cfg.projection->rows()) : model.dim();
  require(static_cast<std::size_t>(anchor.size()) == want, Errc::dimension_mismatch,
          "prox: anchor dimension mismatch");
  if (cfg.projection)
    require(static_cast<std::size_t>(cfg.projection->cols()) == model.dim(), Errc::dimension_mismatch,
            "prox: projection column count must equal model dimension");
}

// Runs passes of shuffled mini-batch steps. `after_pass` returns true to stop.
template <typename Step, typename AfterPass>
int run_passes(const LossModel& model, const ProxConfig& cfg, Step step, AfterPass after_pass) {
  const std::size_t n = model.num_samples();
  const std::size_t bs = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
  IndexList order = all_positions(n);
  for (int pass = 0; pass < cfg.max_passes; ++pass) {
    if (bs < n) {
      Rng rng = make_rng(cfg.seed, Stream::batches,
                         {cfg.client, cfg.round, static_cast<std::uint64_t>(pass)});
      std::shuffle(order.begin(), order.end(), rng);
    }
    for (std::size_t lo = 0; lo < n; lo += bs) {
      const IndexList batch(order.begin() + static_cast<std::ptrdiff_t>(lo),
                            order.begin() + static_cast<std::ptrdiff_t>(std::min(lo + bs, n)));
      step(batch);
    }
    if (after_pass(pass + 1)) return pass + 1;
  }
  return cfg.max_passes;
}

}  // namespace

double prox_residual_sq(const LossModel& model, const ParamVector& theta, const ParamVector& anchor,
                        const ProxConfig& cfg) {
  const ParamVector r = cfg.alpha * (model.grad(theta) + penalty_grad(theta, anchor, cfg));
  return r.squaredNorm();
}

double prox_objective(const LossModel& model, const ParamVector& theta, const ParamVector& anchor,
                      double lambda) {
  return model.loss(theta) + 0.5 * lambda * (theta - anchor).squaredNorm();
}

ProxResult prox_solve(const LossModel& model, const ParamVector& anchor, const ParamVector& warm,
                      const ProxConfig& cfg) {
  require(cfg.eta > 0, Errc::invalid_argument, "prox: eta must be positive");
  require(cfg.lambda > 0, Errc::invalid_argument, "prox: lambda must be positive");
  require(cfg.max_passes >= 1, Errc::invalid_argument, "prox: need at least one pass");
  require(static_cast<std::size_t>(warm.size()) == model.dim(), Errc::dimension_mismatch,
          "prox: warm start dimension mismatch");
  check_anchor(model, anchor, cfg);

  ProxResult res;
  res.theta = warm;
  res.iters_used = run_passes(
      model, cfg,
      [&](const IndexList& batch) {
        res.theta -= cfg.eta * (model.grad(res.theta, batch) + penalty_grad(res.theta, anchor, cfg));
      },
      [&](int pass) {
        require(all_finite(res.theta), Errc::diverged,
                "prox: non-finite iterate after pass " + std::to_string(pass) + " (eta too large?)");
        res.residual_sq = prox_residual_sq(model, res.theta, anchor, cfg);
        res.met_tolerance = res.residual_sq <= cfg.eps_target;
        return res.met_tolerance;
      });
  return res;
}

ParamVector moreau_grad(const LossModel& model, const ParamVector& w, const ProxConfig& cfg) {
  return cfg.lambda * (w - prox_solve(model, w, w, cfg).theta);
}

ParamVector local_sgd(const LossModel& model, const ParamVector& start, const ProxConfig& cfg) {
  require(cfg.eta > 0, Errc::invalid_argument, "local_sgd: eta must be positive");
  require(cfg.max_passes >= 1, Errc::invalid_argument, "local_sgd: need at least one pass");
  ParamVector theta = start;
  run_passes(
      model, cfg, [&](const IndexList& batch) { theta -= cfg.eta * model.grad(theta, batch); },
      [&](int pass) {
        require(all_finite(theta), Errc::diverged,
                "local_sgd: non-finite iterate after pass " + std::to_string(pass));
        return false;
      });
  return theta;
}

std::vector<int> predict(const LossModel& model, const ParamVector& theta) {
  const Matrix z = model.logits(theta);
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index k = 0;
    z.row(i).maxCoeff(&k);  // first maximum, so ties resolve to the lowest class
    out[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  return out;
}

double accuracy(const LossModel& model, const ParamVector& theta, const IndexList& rows) {
  require(model.is_classifier(), Errc::invalid_argument, "accuracy: regression model");
  require(!rows.empty(), Errc::invalid_argument, "accuracy: empty test set");
  const auto view = model.rebind(rows);
  const auto pred = predict(view, theta);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) hits += pred[i] == model.store().labels[rows[i]];
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

}  // namespace flame
