#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "flame/datasets.hpp"
#include "flame/models.hpp"
#include "flame/partitioner.hpp"

namespace flame::testing {

struct LinRegFed {
  std::vector<LinRegClientData> clients;
  std::shared_ptr<SampleStore> store;
  std::vector<IndexList> rows;
  std::vector<LossModel> models;
  std::vector<ParamVector> theta_hat;
};

inline LinRegFed make_linreg(std::size_t m, std::size_t N, std::size_t d, double b, double sigma,
                             std::uint64_t seed, ThetaSpec spec = {}) {
  LinRegFed f;
  f.clients = synth_linreg(m, N, d, b, sigma, spec, seed);
  f.store = make_regression_store(f.clients, &f.rows);
  for (std::size_t i = 0; i < m; ++i) {
    f.models.push_back(LossModel::linreg(f.store, f.rows[i]));
    f.theta_hat.push_back(least_squares(f.clients[i].X, f.clients[i].y));
  }
  return f;
}

struct ClassFed {
  LabeledDataset data;
  std::shared_ptr<SampleStore> store;
  Partition part;
  std::vector<LossModel> models;
};

/// Gaussian-mixture data split by Dirichlet label skew (all rows to one client when m = 1).
inline ClassFed make_classification(std::size_t m, std::size_t n_per_client, std::size_t d, int classes,
                                    std::uint64_t seed, double beta = 0.5) {
  ClassFed f;
  f.data = synth_classification(m, n_per_client, d, classes, 3.0, seed);
  f.part = dirichlet_label(f.data, all_indices(f.data.size()), m, beta, seed + 7);
  f.store = make_classification_store(f.data);
  for (std::size_t i = 0; i < m; ++i) f.models.push_back(LossModel::logistic(f.store, f.part.client_indices[i]));
  return f;
}

}  // namespace flame::testing

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "flame/error.hpp"

namespace flame::testing {

/// Runs fn and returns the library error code it throws; fails the caller's CHECK otherwise.
template <class F>
std::optional<Errc> error_code(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

/// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("flame_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<unsigned char> be32(std::uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
}

inline ParamVector random_vector(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  ParamVector v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = nd(rng);
  return v;
}

}  // namespace flame::testing
