#include "flame/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "flame/baselines.hpp"
#include "flame/error.hpp"
#include "flame/rng.hpp"

#ifndef FLAME_VERSION
#define FLAME_VERSION "0.0.0"
#endif

namespace flame {

const char* library_version() { return FLAME_VERSION; }

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& key, const std::string& msg) {
  throw Error(Errc::config_invalid, key + ": " + msg);
}

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) bad(where, "must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, _] : j.items())
    if (!ok.count(k)) bad(where.empty() ? k : where + "." + k, "unknown key");
}

template <typename T>
T get(const json& j, const std::string& where, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    bad(where + "." + key, "wrong type");
  }
}

std::string join_key(const std::string& where, const char* key) { return where + "." + key; }

ThetaSpec parse_theta(const json& j, const std::string& where) {
  only_keys(j, where, {"mode", "center_scale", "spread", "norm", "fixed"});
  ThetaSpec t;
  const auto mode = get<std::string>(j, where, "mode", "gaussian");
  if (mode == "gaussian") t.mode = ThetaMode::gaussian;
  else if (mode == "equal_norm") t.mode = ThetaMode::equal_norm;
  else if (mode == "fixed") t.mode = ThetaMode::fixed;
  else bad(join_key(where, "mode"), "expected gaussian, equal_norm or fixed");
  t.center_scale = get(j, where, "center_scale", 0.0);
  t.spread = get(j, where, "spread", 1.0);
  t.norm = get(j, where, "norm", 1.0);
  if (j.contains("fixed")) {
    for (const auto& v : get<std::vector<std::vector<double>>>(j, where, "fixed", {}))
      t.fixed.push_back(Eigen::Map<const ParamVector>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  if (t.mode == ThetaMode::fixed && t.fixed.empty()) bad(join_key(where, "fixed"), "required when mode is fixed");
  return t;
}

DatasetSpec parse_dataset(const json& j) {
  const std::string w = "dataset";
  only_keys(j, w, {"kind", "m", "N", "d", "b", "sigma", "theta", "n_per_client", "classes", "separation",
                   "images", "labels", "max_samples"});
  DatasetSpec s;
  const auto kind = get<std::string>(j, w, "kind", "synth_linreg");
  if (kind == "synth_linreg") s.kind = DatasetKind::synth_linreg;
  else if (kind == "synth_classification") s.kind = DatasetKind::synth_classification;
  else if (kind == "idx") s.kind = DatasetKind::idx;
  else bad("dataset.kind", "expected synth_linreg, synth_classification or idx");
  s.m = get(j, w, "m", s.m);
  s.N = get(j, w, "N", s.N);
  s.d = get(j, w, "d", s.d);
  s.b = get(j, w, "b", s.b);
  s.sigma = get(j, w, "sigma", s.sigma);
  if (j.contains("theta")) s.theta = parse_theta(j.at("theta"), "dataset.theta");
  s.n_per_client = get(j, w, "n_per_client", s.n_per_client);
  s.classes = get(j, w, "classes", s.classes);
  s.separation = get(j, w, "separation", s.separation);
  s.max_samples = get(j, w, "max_samples", s.max_samples);
  if (s.m < 1) bad("dataset.m", "must be >= 1");
  if (s.kind == DatasetKind::synth_linreg) {
    if (s.N < s.d) bad("dataset.N", "must be >= d");
    if (s.b <= 0) bad("dataset.b", "must be positive");
    if (s.sigma < 0) bad("dataset.sigma", "must be nonnegative");
  }
  if (s.kind == DatasetKind::synth_classification && s.classes < 2) bad("dataset.classes", "must be >= 2");
  if (s.kind == DatasetKind::idx) {
    if (!j.contains("images")) bad("dataset.images", "required for idx datasets");
    if (!j.contains("labels")) bad("dataset.labels", "required for idx datasets");
    s.images = get<std::string>(j, w, "images", "");
    s.labels = get<std::string>(j, w, "labels", "");
    if (!std::filesystem::exists(s.images)) bad("dataset.images", "file not found: " + s.images.string());
    if (!std::filesystem::exists(s.labels)) bad("dataset.labels", "file not found: " + s.labels.string());
  }
  return s;
}

PartitionSpec parse_partition(const json& j) {
  const std::string w = "partition";
  only_keys(j, w, {"scheme", "q", "beta", "sigma"});
  PartitionSpec p;
  try {
    p.scheme = parse_scheme(get<std::string>(j, w, "scheme", "dirichlet_label"));
  } catch (const Error&) {
    bad("partition.scheme", "unknown scheme");
  }
  p.q = get(j, w, "q", p.q);
  p.beta = get(j, w, "beta", p.beta);
  p.sigma = get(j, w, "sigma", p.sigma);
  if (p.q < 1) bad("partition.q", "must be >= 1");
  if (p.beta <= 0) bad("partition.beta", "must be positive");
  if (p.sigma < 0) bad("partition.sigma", "must be nonnegative");
  return p;
}

HyperParams parse_hparams(const json& j) {
  const std::string w = "hparams";
  only_keys(j, w, {"lambda", "rho", "eta", "H", "T", "s", "v", "eps0", "batch_size", "alpha", "d_sub",
                   "L_estimate", "weighted_aggregation", "allow_infeasible", "threads"});
  HyperParams hp;
  hp.lambda = get(j, w, "lambda", hp.lambda);
  hp.rho = get(j, w, "rho", hp.rho);
  hp.eta = get(j, w, "eta", hp.eta);
  hp.H = get(j, w, "H", hp.H);
  hp.T = get(j, w, "T", hp.T);
  hp.s = get(j, w, "s", hp.s);
  hp.v = get(j, w, "v", hp.v);
  hp.eps0 = get(j, w, "eps0", hp.eps0);
  hp.batch_size = get(j, w, "batch_size", hp.batch_size);
  const auto alpha = get<std::string>(j, w, "alpha", "uniform");
  if (alpha == "uniform") hp.alpha = AlphaScheme::uniform;
  else if (alpha == "proportional") hp.alpha = AlphaScheme::proportional;
  else bad("hparams.alpha", "expected uniform or proportional");
  hp.d_sub = get(j, w, "d_sub", hp.d_sub);
  hp.L_estimate = get(j, w, "L_estimate", hp.L_estimate);
  hp.weighted_aggregation = get(j, w, "weighted_aggregation", hp.weighted_aggregation);
  hp.allow_infeasible = get(j, w, "allow_infeasible", hp.allow_infeasible);
  hp.threads = get(j, w, "threads", hp.threads);
  return hp;
}

AttackConfig parse_attack_cfg(const json& j) {
  const std::string w = "attack";
  only_keys(j, w, {"kind", "gamma", "fraction", "poison"});
  AttackConfig a;
  try {
    a.kind = parse_attack(get<std::string>(j, w, "kind", "none"));
  } catch (const Error&) {
    bad("attack.kind", "unknown attack");
  }
  a.gamma = get(j, w, "gamma", a.gamma);
  a.fraction = get(j, w, "fraction", a.fraction);
  const auto poison = get<std::string>(j, w, "poison", "uniform");
  if (poison == "flip") a.poison = PoisonMode::flip;
  else if (poison == "uniform") a.poison = PoisonMode::uniform;
  else bad("attack.poison", "expected flip or uniform");
  if (a.gamma < 0) bad("attack.gamma", "must be nonnegative");
  if (a.fraction < 0 || a.fraction > 1) bad("attack.fraction", "must be in [0, 1]");
  return a;
}

OracleSpec parse_oracle(const json& j) {
  const std::string w = "oracle";
  only_keys(j, w, {"m", "m_a", "N", "d", "b", "sigma", "gamma", "lambda", "rho", "theta_center",
                   "theta_spread", "trials", "fairness_sets", "sign_flip_bm", "attacks"});
  OracleSpec o;
  o.m = get(j, w, "m", o.m);
  o.m_a = get(j, w, "m_a", o.m_a);
  o.N = get(j, w, "N", o.N);
  o.d = get(j, w, "d", o.d);
  o.b = get(j, w, "b", o.b);
  o.sigma = get(j, w, "sigma", o.sigma);
  o.gamma = get(j, w, "gamma", o.gamma);
  o.lambda = get(j, w, "lambda", o.lambda);
  if (j.contains("rho")) o.rho = get(j, w, "rho", 0.0);
  o.theta_center = get(j, w, "theta_center", o.theta_center);
  o.theta_spread = get(j, w, "theta_spread", o.theta_spread);
  o.trials = get(j, w, "trials", o.trials);
  o.fairness_sets = get(j, w, "fairness_sets", o.fairness_sets);
  o.sign_flip_bm = get(j, w, "sign_flip_bm", o.sign_flip_bm);
  if (j.contains("attacks")) {
    o.attacks.clear();
    for (const auto& name : get<std::vector<std::string>>(j, w, "attacks", {})) {
      try {
        o.attacks.push_back(parse_attack(name));
      } catch (const Error&) {
        bad("oracle.attacks", "unknown attack '" + name + "'");
      }
    }
  }
  if (o.trials < 2) bad("oracle.trials", "need at least two Monte Carlo trials");
  if (o.m < 1) bad("oracle.m", "must be >= 1");
  for (auto ma : o.m_a)
    if (ma >= o.m) bad("oracle.m_a", "every entry must leave at least one benign client");
  if (o.rho && *o.rho <= 0) bad("oracle.rho", "must be positive");
  return o;
}

std::string fmt_value(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

}  // namespace

ExperimentConfig parse_config(const json& j) {
  only_keys(j, "", {"name", "dataset", "partition", "model", "hparams", "algorithm", "aggregator", "attack",
                    "seeds", "eval", "diagnostics", "output", "oracle"});
  ExperimentConfig c;
  c.raw = j;
  c.name = get<std::string>(j, "config", "name", c.name);
  if (j.contains("dataset")) c.dataset = parse_dataset(j.at("dataset"));
  if (j.contains("partition")) c.partition = parse_partition(j.at("partition"));
  if (j.contains("model")) {
    const auto& mj = j.at("model");
    only_keys(mj, "model", {"kind", "hidden"});
    const auto kind = get<std::string>(mj, "model", "kind", "logistic");
    if (kind == "linreg") c.model = ModelKind::linreg;
    else if (kind == "logistic") c.model = ModelKind::logistic;
    else if (kind == "mlp") c.model = ModelKind::mlp;
    else bad("model.kind", "expected linreg, logistic or mlp");
    c.hidden = get(mj, "model", "hidden", c.hidden);
  } else if (c.dataset.kind == DatasetKind::synth_linreg) {
    c.model = ModelKind::linreg;
  }
  if ((c.dataset.kind == DatasetKind::synth_linreg) != (c.model == ModelKind::linreg))
    bad("model.kind", "linreg models go with synth_linreg data and classifiers with classification data");

  if (j.contains("hparams")) c.hp = parse_hparams(j.at("hparams"));
  const auto algo = get<std::string>(j, "config", "algorithm", "flame");
  if (algo == "ditto") {
    c.algorithm = Algorithm::ditto;
  } else {
    try {
      c.hp.mode = parse_mode(algo);
    } catch (const Error&) {
      bad("algorithm", "expected flame, pfedme, fedadmm, fedavg, lp_proj2 or ditto");
    }
  }
  if (j.contains("aggregator")) {
    const auto& aj = j.at("aggregator");
    only_keys(aj, "aggregator", {"kind", "f", "k"});
    const auto kind = get<std::string>(aj, "aggregator", "kind", "mean");
    if (kind == "mean") c.aggregator = Aggregator::mean;
    else if (kind == "multi_krum") c.aggregator = Aggregator::multi_krum;
    else bad("aggregator.kind", "expected mean or multi_krum");
    c.krum_f = get(aj, "aggregator", "f", c.krum_f);
    c.krum_k = get(aj, "aggregator", "k", c.krum_k);
    if (c.algorithm == Algorithm::ditto && c.aggregator != Aggregator::mean)
      bad("aggregator.kind", "ditto runs support only the mean aggregator");
  }
  if (j.contains("attack")) c.attack = parse_attack_cfg(j.at("attack"));
  if (c.attack.kind == AttackKind::label_poison && c.model == ModelKind::linreg)
    bad("attack.kind", "label poisoning needs a classification dataset");
  c.seeds = get(j, "config", "seeds", c.seeds);
  if (c.seeds.empty()) bad("seeds", "need at least one seed");
  if (j.contains("eval")) {
    const auto& ej = j.at("eval");
    only_keys(ej, "eval", {"every", "validation_fraction", "test_fraction"});
    c.eval_every = get(ej, "eval", "every", c.eval_every);
    c.validation_fraction = get(ej, "eval", "validation_fraction", c.validation_fraction);
    c.test_fraction = get(ej, "eval", "test_fraction", c.test_fraction);
    if (c.eval_every < 1) bad("eval.every", "must be >= 1");
    if (c.validation_fraction <= 0 || c.validation_fraction >= 1) bad("eval.validation_fraction", "must be in (0, 1)");
    if (c.test_fraction <= 0 || c.test_fraction >= 1) bad("eval.test_fraction", "must be in (0, 1)");
  }
  c.diagnostics = get(j, "config", "diagnostics", c.diagnostics);
  c.output = get<std::string>(j, "config", "output", c.output.string());
  if (j.contains("oracle")) c.oracle = parse_oracle(j.at("oracle"));

  try {
    c.hp.validate(c.dataset.m);
  } catch (const Error& e) {
    bad("hparams", e.what());
  }
  if (c.aggregator == Aggregator::multi_krum && c.dataset.m < c.krum_f + 3)
    bad("aggregator.f", "multi-Krum needs m - f - 2 >= 1");
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::config_invalid, "config: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw Error(Errc::config_invalid, std::string("config: parse error: ") + e.what());
  }
  return parse_config(j);
}

std::string config_hash(const json& j) {
  json copy = j;
  if (copy.is_object()) copy.erase("output");
  const std::string text = copy.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

Federation build_federation(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto& ds = cfg.dataset;
  Federation fed;
  const std::size_t m = ds.m;

  if (ds.kind == DatasetKind::synth_linreg) {
    const auto clients = synth_linreg(m, ds.N, ds.d, ds.b, ds.sigma, ds.theta, seed);
    const auto val_y = redraw_targets(clients, derive_seed(seed, {101}));
    const auto test_y = redraw_targets(clients, derive_seed(seed, {102}));
    auto store = std::make_shared<SampleStore>();
    const auto n = static_cast<Eigen::Index>(ds.N);
    store->features.resize(3 * n * static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(ds.d));
    store->targets.resize(store->features.rows());
    fed.train_rows.resize(m);
    fed.splits.resize(m);
    // Layout: all training blocks, then validation blocks, then test blocks (same designs).
    for (std::size_t i = 0; i < m; ++i) {
      const Eigen::Index blocks[3] = {static_cast<Eigen::Index>(i) * n,
                                      static_cast<Eigen::Index>(m + i) * n,
                                      static_cast<Eigen::Index>(2 * m + i) * n};
      const Eigen::VectorXd* ys[3] = {&clients[i].y, &val_y[i], &test_y[i]};
      IndexList* lists[3] = {&fed.train_rows[i], &fed.splits[i].validation, &fed.splits[i].test};
      for (int k = 0; k < 3; ++k) {
        store->features.middleRows(blocks[k], n) = clients[i].X;
        store->targets.segment(blocks[k], n) = *ys[k];
        for (Eigen::Index r = 0; r < n; ++r) lists[k]->push_back(static_cast<std::size_t>(blocks[k] + r));
      }
    }
    fed.store = store;
  } else {
    LabeledDataset data;
    if (ds.kind == DatasetKind::idx) {
      data = load_idx(ds.images, ds.labels);
      if (ds.max_samples > 0 && ds.max_samples < data.size()) data = data.subset(all_positions(ds.max_samples));
    } else {
      data = synth_classification(m, ds.n_per_client, ds.d, ds.classes, ds.separation, seed);
    }
    const IndexList pool = all_positions(data.size());
    const auto pseed = derive_seed(seed, {201});
    const auto& p = cfg.partition;
    Partition part;
    switch (p.scheme) {
      case PartitionScheme::quantity_label: part = quantity_label(data, pool, m, p.q, pseed); break;
      case PartitionScheme::dirichlet_label: part = dirichlet_label(data, pool, m, p.beta, pseed); break;
      case PartitionScheme::quantity: part = quantity_skew(data, pool, m, p.beta, pseed); break;
      case PartitionScheme::hybrid: part = hybrid_skew(data, pool, m, p.q, p.beta, pseed); break;
      case PartitionScheme::quality: {
        auto [qp, noisy] = quality_skew(data, pool, m, p.sigma, pseed);
        part = std::move(qp);
        data = std::move(noisy);
        break;
      }
    }
    fed.store = make_classification_store(data);

    // Each client's rows split into test / validation / train after partitioning, so held-out
    // data follows that client's distribution.
    fed.train_rows.resize(m);
    fed.splits.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      IndexList rows = part.client_indices[i];
      require(rows.size() >= 3, Errc::invalid_argument,
              "client " + std::to_string(i) + " has fewer than 3 samples; cannot hold out test and validation data");
      Rng rng = make_rng(seed, Stream::split, {i});
      std::shuffle(rows.begin(), rows.end(), rng);
      const auto n = rows.size();
      auto n_test = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(cfg.test_fraction * n)), 1, n - 2);
      auto n_val = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::llround(cfg.validation_fraction * (n - n_test))), 1, n - n_test - 1);
      auto take = [&](std::size_t lo, std::size_t hi) {
        IndexList out(rows.begin() + static_cast<std::ptrdiff_t>(lo), rows.begin() + static_cast<std::ptrdiff_t>(hi));
        std::sort(out.begin(), out.end());
        return out;
      };
      fed.splits[i].test = take(0, n_test);
      fed.splits[i].validation = take(n_test, n_test + n_val);
      fed.train_rows[i] = take(n_test + n_val, n);
    }
  }

  fed.malicious = malicious_set(m, cfg.attack.kind == AttackKind::none ? 0.0 : cfg.attack.fraction,
                                derive_seed(seed, {301}));
  fed.benign = benign_mask(m, fed.malicious);
  if (cfg.attack.kind == AttackKind::label_poison && !fed.malicious.empty())
    fed.store = poison_store(*fed.store, fed.train_rows, fed.malicious, cfg.attack.poison, derive_seed(seed, {302}));

  for (std::size_t i = 0; i < m; ++i) {
    switch (cfg.model) {
      case ModelKind::linreg: fed.models.push_back(LossModel::linreg(fed.store, fed.train_rows[i])); break;
      case ModelKind::logistic: fed.models.push_back(LossModel::logistic(fed.store, fed.train_rows[i])); break;
      case ModelKind::mlp: fed.models.push_back(LossModel::mlp(fed.store, fed.train_rows[i], cfg.hidden)); break;
    }
  }
  return fed;
}

namespace {

void fill_summaries(MetricsRecord& rec) {
  rec.pm = summarize(rec.clients, &ClientEval::pm);
  rec.gm = summarize(rec.clients, &ClientEval::gm);
  rec.hm = summarize(rec.clients, &ClientEval::hm);
}

double mean_train_loss(const std::vector<LossModel>& models, const std::vector<ParamVector>& params) {
  double s = 0.0;
  for (std::size_t i = 0; i < models.size(); ++i) s += models[i].loss(params[i]);
  return s / static_cast<double>(models.size());
}

}  // namespace

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  const Federation fed = build_federation(cfg, seed);
  const auto& models = fed.models;
  const std::size_t m = models.size();
  SeedResult res;
  res.seed = seed;

  auto wants_eval = [&](int round) { return round % cfg.eval_every == 0 || round == cfg.hp.T; };
  auto record_eval = [&](const RunState& st) {
    MetricsRecord rec;
    rec.round = st.server.round;
    rec.clients = evaluate(st, models, fed.splits, fed.benign);
    fill_summaries(rec);
    std::vector<ParamVector> thetas, globals;
    for (const auto& c : st.clients) thetas.push_back(c.theta);
    res.train_loss_pm.push_back(mean_train_loss(models, thetas));
    if (static_cast<std::size_t>(st.server.w.size()) == models.front().dim()) {
      globals.assign(m, st.server.w);
      res.train_loss_gm.push_back(mean_train_loss(models, globals));
    } else {
      res.train_loss_gm.push_back(std::numeric_limits<double>::quiet_NaN());
    }
    res.eval_rounds.push_back(rec.round);
    res.history.push_back(std::move(rec));
  };

  if (cfg.algorithm == Algorithm::ditto) {
    const auto attack = apply_attack({}, cfg.attack, fed.malicious, derive_seed(seed, {303}));
    ditto_run(cfg.hp, models, seed, [&](const BaselineState& b) {
      if (!wants_eval(b.round)) return;
      RunState st;
      st.server.round = b.round;
      st.server.w = b.w;
      st.clients.resize(m);
      for (std::size_t i = 0; i < m; ++i) st.clients[i].theta = b.theta[i];
      record_eval(st);
    }, attack.upload);
  } else {
    std::optional<DiagnosticsTracker> tracker;
    if (cfg.diagnostics) tracker.emplace(models, cfg.hp);
    RunHooks hooks;
    hooks.on_round = [&](const RunState& st) {
      if (tracker) tracker->observe(st);
      if (wants_eval(st.server.round)) record_eval(st);
    };
    if (cfg.aggregator == Aggregator::multi_krum) {
      const std::size_t f = cfg.krum_f;
      const std::size_t k = cfg.krum_k == 0 ? m - f : cfg.krum_k;
      hooks.aggregate = [f, k](const std::vector<ParamVector>& msgs) { return multi_krum(msgs, f, k).aggregate; };
    }
    hooks = apply_attack(std::move(hooks), cfg.attack, fed.malicious, derive_seed(seed, {303}));
    run(cfg.hp, models, seed, hooks);
    if (tracker) {
      const auto& diag = tracker->records();
      for (auto& rec : res.history) {
        const auto& d = diag.at(static_cast<std::size_t>(rec.round));
        rec.lyapunov = d.lyapunov;
        rec.grad_sq = d.grad_sq;
        rec.mean_sq_grad = d.mean_sq_grad;
        rec.descent_gap = d.descent_gap;
        rec.relerr_gap = d.relerr_gap;
      }
    }
  }
  res.final = res.history.back();
  return res;
}

namespace {

json run_and_write(const ExperimentConfig& cfg, std::vector<SeedResult>* kept) {
  std::filesystem::create_directories(cfg.output);
  const auto hash = config_hash(cfg.raw);
  const std::string mode = cfg.algorithm == Algorithm::ditto ? "ditto" : mode_name(cfg.hp.mode);

  json seeds = json::array();
  std::vector<std::string> files;
  std::map<std::string, std::vector<double>> finals;
  for (auto seed : cfg.seeds) {
    const auto res = run_seed(cfg, seed);
    const std::string file = "seed_" + std::to_string(seed) + ".csv";
    std::ofstream csv(cfg.output / file);
    if (!csv) throw Error(Errc::io, "cannot write " + (cfg.output / file).string());
    write_csv_header(csv);
    const std::string run_id = cfg.name + "-s" + std::to_string(seed);
    for (const auto& rec : res.history) write_csv_rows(csv, run_id, mode, rec);
    files.push_back(file);

    auto j = record_to_json(res.final);
    j["seed"] = seed;
    j["train_loss_pm"] = num(res.train_loss_pm.back());
    j["train_loss_gm"] = num(res.train_loss_gm.back());
    seeds.push_back(j);
    if (kept) kept->push_back(res);
    const std::pair<const char*, const ModelSummary*> sums[] = {
        {"PM", &res.final.pm}, {"GM", &res.final.gm}, {"HM", &res.final.hm}};
    for (const auto& [name, s] : sums) {
      finals[std::string(name) + ".mean_acc"].push_back(s->mean_acc);
      finals[std::string(name) + ".mean_loss"].push_back(s->mean_loss);
      finals[std::string(name) + ".loss_var"].push_back(s->loss_var);
      finals[std::string(name) + ".benign_acc"].push_back(s->benign_acc);
      finals[std::string(name) + ".benign_loss"].push_back(s->benign_loss);
    }
  }

  // Across-seed mean and sample standard deviation of the final-round metrics.
  json across = json::object();
  for (const auto& [key, xs] : finals) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    across[key] = {{"mean", num(mean)}, {"std", num(sd)}};
  }

  json summary = {{"name", cfg.name}, {"config_hash", hash}, {"mode", mode},
                  {"seeds", seeds},   {"across_seeds", across}};
  json manifest = {{"name", cfg.name},
                   {"config_hash", hash},
                   {"version", library_version()},
                   {"mode", mode},
                   {"seeds", cfg.seeds},
                   {"files", files},
                   {"config", cfg.raw}};
  std::ofstream(cfg.output / "summary.json") << summary.dump(2) << '\n';
  std::ofstream(cfg.output / "manifest.json") << manifest.dump(2) << '\n';
  return summary;
}

}  // namespace

json run_experiment(const ExperimentConfig& cfg) { return run_and_write(cfg, nullptr); }

json sweep(const ExperimentConfig& cfg, const std::string& axis, const std::vector<double>& values) {
  if (axis != "lambda" && axis != "H" && axis != "rho" && axis != "s")
    throw Error(Errc::config_invalid, "sweep axis must be one of lambda, H, rho, s");
  if (values.empty()) throw Error(Errc::config_invalid, "sweep needs at least one value");
  std::filesystem::create_directories(cfg.output);
  std::ofstream curves(cfg.output / "curves.csv");
  curves << "axis,value,seed,round,train_loss_pm,train_loss_gm\n";
  json out = {{"axis", axis}, {"runs", json::array()}};
  for (double v : values) {
    ExperimentConfig c = cfg;
    auto& hpj = c.raw["hparams"];
    if (axis == "lambda") c.hp.lambda = v, hpj["lambda"] = v;
    if (axis == "rho") c.hp.rho = v, hpj["rho"] = v;
    if (axis == "H") c.hp.H = static_cast<int>(v), hpj["H"] = c.hp.H;
    if (axis == "s") c.hp.s = static_cast<std::size_t>(v), hpj["s"] = c.hp.s;
    try {
      c.hp.validate(c.dataset.m);
    } catch (const Error& e) {
      throw Error(Errc::config_invalid, "sweep value " + fmt_value(v) + ": " + e.what());
    }
    c.output = cfg.output / (axis + "_" + fmt_value(v));
    std::vector<SeedResult> results;
    const auto summary = run_and_write(c, &results);
    for (const auto& res : results) {
      const auto seed = res.seed;
      for (std::size_t k = 0; k < res.eval_rounds.size(); ++k)
        curves << axis << ',' << fmt_value(v) << ',' << seed << ',' << res.eval_rounds[k] << ','
               << std::setprecision(10) << res.train_loss_pm[k] << ',' << res.train_loss_gm[k] << '\n';
    }
    out["runs"].push_back({{"value", v}, {"output", c.output.string()}, {"summary", summary}});
  }
  std::ofstream(cfg.output / "sweep.json") << out.dump(2) << '\n';
  return out;
}

std::vector<ParamVector> oracle_thetas(std::size_t m, std::size_t d, double center, double spread,
                                       std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::oracle, {0xC0FFEE});
  std::normal_distribution<double> normal(0.0, 1.0);
  ParamVector c(static_cast<Eigen::Index>(d));
  for (Eigen::Index k = 0; k < c.size(); ++k) c[k] = center * normal(rng);
  std::vector<ParamVector> out;
  for (std::size_t i = 0; i < m; ++i) {
    ParamVector t = c;
    for (Eigen::Index k = 0; k < t.size(); ++k) t[k] += spread * normal(rng);
    out.push_back(std::move(t));
  }
  return out;
}

json verify_oracle(const ExperimentConfig& cfg) {
  if (!cfg.oracle) throw Error(Errc::config_invalid, "oracle: section required for verify-oracle");
  const auto& o = *cfg.oracle;
  const auto seed = cfg.seeds.front();
  json checks = json::array();
  bool all_pass = true;
  auto add = [&](json c) {
    all_pass = all_pass && c["pass"].get<bool>();
    checks.push_back(std::move(c));
  };

  LinRegWorld base;
  base.m = o.m;
  base.N = o.N;
  base.d = o.d;
  base.b = o.b;
  base.sigma = o.sigma;
  base.gamma = o.gamma;
  base.lambda = o.lambda;
  base.rho = o.rho.value_or(o.lambda / static_cast<double>(o.m));
  base.sign_flip_bm = o.sign_flip_bm;
  base.theta = oracle_thetas(o.m, o.d, o.theta_center, o.theta_spread, seed);

  auto within = [](double mc, double se, double closed) { return std::abs(mc - closed) <= 3.0 * se; };

  // Clean setting at the exact solution.
  {
    const auto closed = expected_losses(base);
    const auto mc = monte_carlo_losses(base, AttackKind::none, 1.0, o.trials, derive_seed(seed, {1}), true);
    add({{"name", "clean_expected_losses"},
         {"pass", within(mc.mean.gm, mc.stderr_.gm, closed.gm) && within(mc.mean.pm, mc.stderr_.pm, closed.pm)},
         {"closed", {{"gm", closed.gm}, {"pm", closed.pm}}},
         {"monte_carlo", {{"gm", mc.mean.gm}, {"pm", mc.mean.pm}}},
         {"stderr", {{"gm", mc.stderr_.gm}, {"pm", mc.stderr_.pm}}}});
  }

  for (auto ma : o.m_a) {
    LinRegWorld w = base;
    w.m_a = ma;
    for (auto kind : o.attacks) {
      const auto rep = attack_losses(w, kind);
      const auto mc = monte_carlo_losses(w, kind, rep.q, o.trials,
                                         derive_seed(seed, {2, ma, static_cast<std::uint64_t>(kind)}), true);
      const std::string tag = attack_name(kind) + "_ma" + std::to_string(ma);
      add({{"name", "monte_carlo_" + tag},
           {"pass", within(mc.mean.gm, mc.stderr_.gm, rep.flame.gm) && within(mc.mean.pm, mc.stderr_.pm, rep.flame.pm)},
           {"q", rep.q},
           {"closed", {{"gm", rep.flame.gm}, {"pm", rep.flame.pm}}},
           {"monte_carlo", {{"gm", mc.mean.gm}, {"pm", mc.mean.pm}}},
           {"stderr", {{"gm", mc.stderr_.gm}, {"pm", mc.stderr_.pm}}}});
      const bool gm_ok = !rep.gm_threshold_met || rep.gm_not_worse;
      const bool pm_ok = !rep.pm_threshold_met || rep.pm_not_worse;
      add({{"name", "threshold_implies_no_worse_" + tag},
           {"pass", gm_ok && pm_ok},
           {"threshold", {{"gm", num(rep.threshold.gm)}, {"pm", num(rep.threshold.pm)}}},
           {"threshold_met", {{"gm", rep.gm_threshold_met}, {"pm", rep.pm_threshold_met}}},
           {"flame", {{"gm", rep.flame.gm}, {"pm", rep.flame.pm}}},
           {"q_equals_1", {{"gm", rep.reference.gm}, {"pm", rep.reference.pm}}}});
    }
  }

  // Fairness on equal-norm parameter sets.
  {
    bool ok = true;
    double worst_gap = -std::numeric_limits<double>::infinity();
    double min_slope = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < o.fairness_sets; ++k) {
      auto thetas = oracle_thetas(o.m, o.d, o.theta_center, o.theta_spread, derive_seed(seed, {3, k}));
      for (auto& t : thetas) t.normalize();
      const auto at1 = fairness_variances(thetas, o.b, o.lambda, 1.0);
      min_slope = std::min(min_slope, at1.dvar_dq);
      ok = ok && at1.dvar_dq >= 0;
      for (int j = 1; j <= 9; ++j) {
        const auto r = fairness_variances(thetas, o.b, o.lambda, j / 10.0);
        worst_gap = std::max({worst_gap, r.var_gm - at1.var_gm, r.var_pm - at1.var_pm});
        ok = ok && r.var_gm <= at1.var_gm && r.var_pm <= at1.var_pm;
      }
    }
    add({{"name", "fairness_variance_monotone"}, {"pass", ok}, {"sets", o.fairness_sets},
         {"max_var_minus_var_at_1", worst_gap}, {"min_derivative_at_1", min_slope}});
  }

  return {{"pass", all_pass}, {"config_hash", config_hash(cfg.raw)}, {"world", world_to_json(base)},
          {"trials", o.trials}, {"checks", checks}};
}

}  // namespace flame
