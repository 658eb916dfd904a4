#pragma once

#include <functional>
#include <vector>

#include "flame/engine.hpp"
#include "flame/models.hpp"

namespace flame {

/// Snapshot shared by the reference loops below.
struct BaselineState {
  int round = 0;
  ParamVector w;
  std::vector<ParamVector> theta;    // personalized models
  std::vector<ParamVector> w_local;  // local copies (pFedMe) or last FedAvg uploads (Ditto)
  std::vector<double> eps;
};

using BaselineObserver = std::function<void(const BaselineState&)>;

/// Alternating minimization with the dual variables pinned at zero. Written independently of
/// the engine so that it cross-checks Mode::pfedme.
BaselineState pfedme_run(const HyperParams& hp, const std::vector<LossModel>& models,
                         std::uint64_t seed, const BaselineObserver& observe = {});

/// FedAvg global phase plus a per-client regularized personal model anchored at the round's
/// incoming global model. Uses (eta, H, batch_size) for both phases. `upload` may rewrite the
/// FedAvg messages (same contract as RunHooks::upload).
BaselineState ditto_run(const HyperParams& hp, const std::vector<LossModel>& models,
                        std::uint64_t seed, const BaselineObserver& observe = {},
                        const std::function<ParamVector(std::size_t, int, const ParamVector&)>& upload = {});

struct KrumResult {
  ParamVector aggregate;
  IndexList selected;  // ascending
  std::vector<double> scores;
};

/// Scores each update by the summed squared distance to its m - f - 2 nearest neighbours and
/// averages the k best.
KrumResult multi_krum(const std::vector<ParamVector>& updates, std::size_t f, std::size_t k);

}  // namespace flame
