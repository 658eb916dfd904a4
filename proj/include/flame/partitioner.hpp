#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flame/datasets.hpp"
#include "flame/rng.hpp"
#include "flame/types.hpp"

namespace flame {

enum class PartitionScheme { quantity_label, dirichlet_label, quality, quantity, hybrid };

std::string scheme_name(PartitionScheme s);
PartitionScheme parse_scheme(const std::string& name);

struct Partition {
  std::vector<IndexList> client_indices;
  PartitionScheme scheme = PartitionScheme::quantity_label;
  int q = 0;
  double beta = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;

  std::size_t num_clients() const { return client_indices.size(); }
  std::size_t total() const;

  /// Throws unless lists are disjoint, non-empty and inside [0, n).
  void validate(std::size_t n) const;
};

/// Index list [0, n).
IndexList all_indices(std::size_t n);

// Every scheme partitions `pool` (a subset of dataset rows, usually the training split).

Partition quantity_label(const LabeledDataset& data, const IndexList& pool, std::size_t m, int q,
                         std::uint64_t seed);

Partition dirichlet_label(const LabeledDataset& data, const IndexList& pool, std::size_t m,
                          double beta, std::uint64_t seed);

/// Equal random split, then client i (1-based) gets N(0, sigma * i / m) feature noise.
std::pair<Partition, LabeledDataset> quality_skew(const LabeledDataset& data, const IndexList& pool,
                                                  std::size_t m, double sigma, std::uint64_t seed);

/// Draws client proportions; replaceable to exercise the empty-client re-draw path.
using ProportionSampler = std::function<std::vector<double>(std::size_t m, Rng& rng)>;

Partition quantity_skew(const LabeledDataset& data, const IndexList& pool, std::size_t m,
                        double beta, std::uint64_t seed, const ProportionSampler& sampler = {});

/// The pool is halved within each class. The first ceil(m/2) clients split one half by label
/// shards, the rest split the other half by quantity skew.
Partition hybrid_skew(const LabeledDataset& data, const IndexList& pool, std::size_t m, int q,
                      double beta, std::uint64_t seed);

constexpr int kMaxRedraws = 100;

nlohmann::json partition_to_json(const Partition& p);
Partition partition_from_json(const nlohmann::json& j);

}  // namespace flame
