#include "flame/partitioner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "flame/error.hpp"
#include "flame/rng.hpp"

namespace flame {

namespace {

std::vector<double> dirichlet(std::size_t m, double beta, Rng& rng) {
  std::gamma_distribution<double> gamma(beta, 1.0);
  std::vector<double> p(m);
  double sum = 0.0;
  // Tiny beta can underflow every draw to zero; just draw again.
  while (sum <= 0.0) {
    sum = 0.0;
    for (auto& x : p) sum += (x = gamma(rng));
  }
  for (auto& x : p) x /= sum;
  return p;
}

// Splits `items` into consecutive blocks sized by the cumulative proportions p.
void append_cuts(const IndexList& items, const std::vector<double>& p, std::vector<IndexList>& lists) {
  double cum = 0.0;
  std::size_t lo = 0;
  const std::size_t n = items.size();
  for (std::size_t c = 0; c < p.size(); ++c) {
    cum += p[c];
    std::size_t hi = c + 1 == p.size() ? n : static_cast<std::size_t>(std::llround(cum * static_cast<double>(n)));
    hi = std::clamp(hi, lo, n);
    lists[c].insert(lists[c].end(), items.begin() + static_cast<std::ptrdiff_t>(lo),
                    items.begin() + static_cast<std::ptrdiff_t>(hi));
    lo = hi;
  }
}

bool any_empty(const std::vector<IndexList>& lists) {
  return std::any_of(lists.begin(), lists.end(), [](const IndexList& l) { return l.empty(); });
}

void sort_lists(std::vector<IndexList>& lists) {
  for (auto& l : lists) std::sort(l.begin(), l.end());
}

void check_pool(const LabeledDataset& data, const IndexList& pool, std::size_t m) {
  require(m >= 1, Errc::invalid_argument, "partition: m must be >= 1");
  for (auto i : pool) require(i < data.size(), Errc::invalid_argument, "partition: pool index out of range");
}

}  // namespace

std::string scheme_name(PartitionScheme s) {
  switch (s) {
    case PartitionScheme::quantity_label: return "quantity_label";
    case PartitionScheme::dirichlet_label: return "dirichlet_label";
    case PartitionScheme::quality: return "quality";
    case PartitionScheme::quantity: return "quantity";
    case PartitionScheme::hybrid: return "hybrid";
  }
  return "unknown";
}

PartitionScheme parse_scheme(const std::string& name) {
  for (auto s : {PartitionScheme::quantity_label, PartitionScheme::dirichlet_label,
                 PartitionScheme::quality, PartitionScheme::quantity, PartitionScheme::hybrid})
    if (scheme_name(s) == name) return s;
  throw Error(Errc::config_invalid, "unknown partition scheme '" + name + "'");
}

std::size_t Partition::total() const {
  std::size_t n = 0;
  for (const auto& l : client_indices) n += l.size();
  return n;
}

void Partition::validate(std::size_t n) const {
  std::vector<bool> seen(n, false);
  for (std::size_t c = 0; c < client_indices.size(); ++c) {
    require(!client_indices[c].empty(), Errc::invalid_argument,
            "partition: client " + std::to_string(c) + " is empty");
    for (auto i : client_indices[c]) {
      require(i < n, Errc::invalid_argument, "partition: index out of range");
      require(!seen[i], Errc::invalid_argument, "partition: index assigned twice");
      seen[i] = true;
    }
  }
}

IndexList all_indices(std::size_t n) { return all_positions(n); }

Partition quantity_label(const LabeledDataset& data, const IndexList& pool, std::size_t m, int q,
                         std::uint64_t seed) {
  check_pool(data, pool, m);
  require(q >= 1, Errc::invalid_argument, "quantity_label: q must be >= 1");
  const std::size_t shards = m * static_cast<std::size_t>(q);
  require(shards <= pool.size(), Errc::invalid_argument,
          "quantity_label: q*m = " + std::to_string(shards) + " exceeds sample count " +
              std::to_string(pool.size()));

  IndexList order = pool;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return data.labels[a] != data.labels[b] ? data.labels[a] < data.labels[b] : a < b;
  });

  IndexList shard_ids = all_indices(shards);
  Rng rng = make_rng(seed, Stream::partition, {0});
  std::shuffle(shard_ids.begin(), shard_ids.end(), rng);

  Partition out;
  out.scheme = PartitionScheme::quantity_label;
  out.q = q;
  out.seed = seed;
  out.client_indices.resize(m);
  const std::size_t n = order.size();
  for (std::size_t slot = 0; slot < shards; ++slot) {
    const std::size_t s = shard_ids[slot];
    const std::size_t lo = s * n / shards;
    const std::size_t hi = (s + 1) * n / shards;
    auto& dst = out.client_indices[slot / static_cast<std::size_t>(q)];
    dst.insert(dst.end(), order.begin() + static_cast<std::ptrdiff_t>(lo),
               order.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  sort_lists(out.client_indices);
  return out;
}

Partition dirichlet_label(const LabeledDataset& data, const IndexList& pool, std::size_t m,
                          double beta, std::uint64_t seed) {
  check_pool(data, pool, m);
  require(beta > 0, Errc::invalid_argument, "dirichlet_label: beta must be positive");

  std::vector<IndexList> by_class(static_cast<std::size_t>(data.num_classes));
  for (auto i : pool) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);

  Partition out;
  out.scheme = PartitionScheme::dirichlet_label;
  out.beta = beta;
  out.seed = seed;
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    Rng rng = make_rng(seed, Stream::partition, {1, static_cast<std::uint64_t>(attempt)});
    std::vector<IndexList> lists(m);
    for (auto members : by_class) {
      std::shuffle(members.begin(), members.end(), rng);
      append_cuts(members, dirichlet(m, beta, rng), lists);
    }
    if (!any_empty(lists)) {
      sort_lists(lists);
      out.client_indices = std::move(lists);
      return out;
    }
  }
  throw Error(Errc::redraw_exhausted, "dirichlet_label: empty client after 100 re-draws");
}

std::pair<Partition, LabeledDataset> quality_skew(const LabeledDataset& data, const IndexList& pool,
                                                  std::size_t m, double sigma, std::uint64_t seed) {
  check_pool(data, pool, m);
  require(sigma >= 0, Errc::invalid_argument, "quality_skew: sigma must be nonnegative");
  require(pool.size() >= m, Errc::invalid_argument, "quality_skew: fewer samples than clients");

  IndexList order = pool;
  Rng rng = make_rng(seed, Stream::partition, {2});
  std::shuffle(order.begin(), order.end(), rng);

  Partition part;
  part.scheme = PartitionScheme::quality;
  part.sigma = sigma;
  part.seed = seed;
  part.client_indices.resize(m);
  for (std::size_t c = 0; c < m; ++c) {
    const std::size_t lo = c * order.size() / m;
    const std::size_t hi = (c + 1) * order.size() / m;
    part.client_indices[c].assign(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                  order.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  sort_lists(part.client_indices);

  LabeledDataset noisy = data;
  if (sigma > 0) {
    for (std::size_t c = 0; c < m; ++c) {
      // sigma * i / m is a variance; i runs from 1 so no client is noise-free.
      const double var = sigma * static_cast<double>(c + 1) / static_cast<double>(m);
      std::normal_distribution<double> noise(0.0, std::sqrt(var));
      Rng nrng = make_rng(seed, Stream::partition, {3, c});
      for (auto row : part.client_indices[c])
        for (Eigen::Index j = 0; j < noisy.features.cols(); ++j)
          noisy.features(static_cast<Eigen::Index>(row), j) += noise(nrng);
    }
  }
  return {std::move(part), std::move(noisy)};
}

Partition quantity_skew(const LabeledDataset& data, const IndexList& pool, std::size_t m,
                        double beta, std::uint64_t seed, const ProportionSampler& sampler) {
  check_pool(data, pool, m);
  require(beta > 0, Errc::invalid_argument, "quantity_skew: beta must be positive");

  Partition out;
  out.scheme = PartitionScheme::quantity;
  out.beta = beta;
  out.seed = seed;
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    Rng rng = make_rng(seed, Stream::partition, {4, static_cast<std::uint64_t>(attempt)});
    const auto p = sampler ? sampler(m, rng) : dirichlet(m, beta, rng);
    require(p.size() == m, Errc::invalid_argument, "quantity_skew: proportion vector has wrong size");
    std::vector<IndexList> lists(m);
    IndexList order = pool;
    std::shuffle(order.begin(), order.end(), rng);
    append_cuts(order, p, lists);
    if (!any_empty(lists)) {
      sort_lists(lists);
      out.client_indices = std::move(lists);
      return out;
    }
  }
  throw Error(Errc::redraw_exhausted, "quantity_skew: empty client after 100 re-draws");
}

Partition hybrid_skew(const LabeledDataset& data, const IndexList& pool, std::size_t m, int q,
                      double beta, std::uint64_t seed) {
  check_pool(data, pool, m);
  require(m >= 2, Errc::invalid_argument, "hybrid_skew: need at least two clients");

  // Halve every class separately so the label-skew half keeps the class balance.
  std::vector<IndexList> by_class(static_cast<std::size_t>(data.num_classes));
  for (auto i : pool) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
  Rng rng = make_rng(seed, Stream::partition, {5});
  IndexList half_a, half_b;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto mid = members.begin() + static_cast<std::ptrdiff_t>(members.size() / 2);
    half_a.insert(half_a.end(), members.begin(), mid);
    half_b.insert(half_b.end(), mid, members.end());
  }
  std::sort(half_a.begin(), half_a.end());
  std::sort(half_b.begin(), half_b.end());

  const std::size_t m_label = (m + 1) / 2;
  const auto a = quantity_label(data, half_a, m_label, q, derive_seed(seed, {6}));
  const auto b = quantity_skew(data, half_b, m - m_label, beta, derive_seed(seed, {7}));

  Partition out;
  out.scheme = PartitionScheme::hybrid;
  out.q = q;
  out.beta = beta;
  out.seed = seed;
  out.client_indices = a.client_indices;
  out.client_indices.insert(out.client_indices.end(), b.client_indices.begin(), b.client_indices.end());
  return out;
}

nlohmann::json partition_to_json(const Partition& p) {
  return {{"scheme", scheme_name(p.scheme)}, {"q", p.q},         {"beta", p.beta},
          {"sigma", p.sigma},                {"seed", p.seed},   {"clients", p.client_indices}};
}

Partition partition_from_json(const nlohmann::json& j) {
  Partition p;
  p.scheme = parse_scheme(j.at("scheme").get<std::string>());
  p.q = j.value("q", 0);
  p.beta = j.value("beta", 0.0);
  p.sigma = j.value("sigma", 0.0);
  p.seed = j.value("seed", std::uint64_t{0});
  p.client_indices = j.at("clients").get<std::vector<IndexList>>();
  return p;
}

}  // namespace flame
