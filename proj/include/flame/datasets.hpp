#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "flame/types.hpp"

namespace flame {

/// Feature matrix plus integer class labels in [0, num_classes).
struct LabeledDataset {
  Matrix features;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

  /// Throws if row count and label count disagree or a label is out of range.
  void validate() const;

  LabeledDataset subset(const IndexList& rows) const;
};

// IDX ingestion. Images become rows scaled to [0, 1] (byte / 255).
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

/// Writes features * 255 (rounded, clamped to a byte) and labels as an IDX pair.
void write_idx(const LabeledDataset& data, std::size_t rows, std::size_t cols,
               const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

struct LinRegClientData {
  Matrix X;               // N x d, X^T X = N b I
  Eigen::VectorXd y;      // X theta + z
  ParamVector true_theta;
  double b = 1.0;
  double sigma = 0.0;
};

enum class ThetaMode { fixed, gaussian, equal_norm };

/// How the per-client ground-truth parameters are produced.
struct ThetaSpec {
  ThetaMode mode = ThetaMode::gaussian;
  std::vector<ParamVector> fixed;  // used by ThetaMode::fixed, one per client
  double center_scale = 0.0;       // std of a shared center drawn once
  double spread = 1.0;             // per-client deviation std around the center
  double norm = 1.0;               // common norm for ThetaMode::equal_norm
};

std::vector<LinRegClientData> synth_linreg(std::size_t m, std::size_t N, std::size_t d, double b,
                                           double sigma, const ThetaSpec& theta_gen,
                                           std::uint64_t seed);

/// Redraws the noise for every client with the design held fixed (test targets y').
std::vector<Eigen::VectorXd> redraw_targets(const std::vector<LinRegClientData>& clients,
                                            std::uint64_t seed);

/// (X^T X)^{-1} X^T y
ParamVector least_squares(const Matrix& X, const Eigen::VectorXd& y);

/// Balanced Gaussian-mixture classification data; m * n_per_client samples.
LabeledDataset synth_classification(std::size_t m, std::size_t n_per_client, std::size_t d,
                                    int num_classes, double separation, std::uint64_t seed);

struct TrainTestSplit {
  IndexList train;
  IndexList test;
};

/// Global random split of [0, n); applied before partitioning.
TrainTestSplit split_indices(std::size_t n, double test_fraction, std::uint64_t seed);

}  // namespace flame
