#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "flame/datasets.hpp"
#include "flame/types.hpp"

namespace flame {

enum class ModelKind { linreg, logistic, mlp };

/// Shared, read-only sample storage. Regression uses `targets`, classification `labels`.
struct SampleStore {
  Matrix features;
  Eigen::VectorXd targets;
  std::vector<int> labels;
  int num_classes = 0;
};

/// A loss bound to one client's rows of a shared store. Batches are local positions
/// in [0, num_samples()).
class LossModel {
 public:
  static LossModel linreg(std::shared_ptr<const SampleStore> store, IndexList rows);
  static LossModel logistic(std::shared_ptr<const SampleStore> store, IndexList rows);
  /// Hidden widths may be empty, which gives a softmax-linear model.
  static LossModel mlp(std::shared_ptr<const SampleStore> store, IndexList rows,
                       std::vector<int> hidden);

  /// Same architecture over different rows of the same store.
  LossModel rebind(IndexList rows) const;

  ModelKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  std::size_t num_samples() const { return rows_.size(); }
  const IndexList& rows() const { return rows_; }
  const SampleStore& store() const { return *store_; }
  std::shared_ptr<const SampleStore> store_ptr() const { return store_; }
  const std::vector<int>& hidden() const { return hidden_; }
  bool is_classifier() const { return kind_ != ModelKind::linreg; }

  double loss(const ParamVector& theta, const IndexList& batch) const;
  double loss(const ParamVector& theta) const;
  ParamVector grad(const ParamVector& theta, const IndexList& batch) const;
  ParamVector grad(const ParamVector& theta) const;

  /// Class scores for every bound row (classification only).
  Matrix logits(const ParamVector& theta) const;

 private:
  LossModel() = default;
  double loss_and_grad(const ParamVector& theta, const IndexList& batch, ParamVector* g) const;
  double linreg_eval(const ParamVector& theta, const IndexList& batch, ParamVector* g) const;
  double net_eval(const ParamVector& theta, const IndexList& batch, ParamVector* g) const;
  Matrix gather(const IndexList& batch) const;
  std::vector<int> layer_widths() const;

  ModelKind kind_ = ModelKind::linreg;
  std::shared_ptr<const SampleStore> store_;
  IndexList rows_;
  std::vector<int> hidden_;
  std::size_t dim_ = 0;
};

/// Store holding a regression design; rows of every client are stacked.
std::shared_ptr<SampleStore> make_regression_store(const std::vector<LinRegClientData>& clients,
                                                   std::vector<IndexList>* client_rows);
std::shared_ptr<SampleStore> make_classification_store(const LabeledDataset& data);

/// Zero for convex models; seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for MLPs.
ParamVector init_params(const LossModel& model, std::uint64_t seed);

struct ProxConfig {
  double lambda = 1.0;
  double eta = 0.01;
  int max_passes = 1;
  double eps_target = 0.0;
  std::size_t batch_size = 100;  // 0 means full batch
  double alpha = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t client = 0;
  std::uint64_t round = 0;
  /// When set, the penalty is (lambda/2)||P theta - anchor||^2 with anchor in the row space.
  const Matrix* projection = nullptr;
};

struct ProxResult {
  ParamVector theta;
  double residual_sq = 0.0;
  int iters_used = 0;
  bool met_tolerance = false;
};

/// Mini-batch gradient descent on f(theta) + (lambda/2)||theta - anchor||^2 from `warm`.
/// Stops after the first pass whose full-batch residual ||alpha * grad||^2 <= eps_target.
ProxResult prox_solve(const LossModel& model, const ParamVector& anchor, const ParamVector& warm,
                      const ProxConfig& cfg);

/// Full-batch ||alpha (grad f + lambda P^T (P theta - anchor))||^2.
double prox_residual_sq(const LossModel& model, const ParamVector& theta, const ParamVector& anchor,
                        const ProxConfig& cfg);

/// f(theta) + (lambda/2)||theta - anchor||^2 on the full batch.
double prox_objective(const LossModel& model, const ParamVector& theta, const ParamVector& anchor,
                      double lambda);

/// lambda (w - prox(w)).
ParamVector moreau_grad(const LossModel& model, const ParamVector& w, const ProxConfig& cfg);

/// Plain local SGD from `start` for cfg.max_passes passes (cfg.lambda ignored).
ParamVector local_sgd(const LossModel& model, const ParamVector& start, const ProxConfig& cfg);

/// Top-1 accuracy over `rows` of the model's store. Ties go to the lowest class index.
double accuracy(const LossModel& model, const ParamVector& theta, const IndexList& rows);

std::vector<int> predict(const LossModel& model, const ParamVector& theta);

}  // namespace flame
