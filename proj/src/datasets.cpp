#include "flame/datasets.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "flame/error.hpp"
#include "flame/rng.hpp"

namespace flame {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::io, "cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                        const std::string& what) {
  require(buf.size() >= offset + 4, Errc::truncated, what + ": header too short");
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>((v >> 24) & 0xFF),
                                  static_cast<char>((v >> 16) & 0xFF),
                                  static_cast<char>((v >> 8) & 0xFF),
                                  static_cast<char>(v & 0xFF)};
  out.write(bytes.data(), 4);
}

}  // namespace

void LabeledDataset::validate() const {
  require(static_cast<std::size_t>(features.rows()) == labels.size(), Errc::count_mismatch,
          "feature rows and label count differ");
  require(num_classes >= 1, Errc::invalid_argument, "num_classes must be positive");
  for (int l : labels)
    require(l >= 0 && l < num_classes, Errc::invalid_argument, "label out of range");
}

LabeledDataset LabeledDataset::subset(const IndexList& rows) const {
  LabeledDataset out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.features.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(rows[r]));
    out.labels.push_back(labels[rows[r]]);
  }
  return out;
}

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  require(read_be32(img, 0, "images") == kImageMagic, Errc::bad_magic,
          "image file magic is not 0x00000803");
  require(read_be32(lab, 0, "labels") == kLabelMagic, Errc::bad_magic,
          "label file magic is not 0x00000801");

  const std::size_t n_img = read_be32(img, 4, "images");
  const std::size_t rows = read_be32(img, 8, "images");
  const std::size_t cols = read_be32(img, 12, "images");
  const std::size_t n_lab = read_be32(lab, 4, "labels");

  require(n_img == n_lab, Errc::count_mismatch,
          "image count " + std::to_string(n_img) + " != label count " + std::to_string(n_lab));
  const std::size_t pixels = rows * cols;
  require(img.size() >= 16 + n_img * pixels, Errc::truncated, "image payload truncated");
  require(lab.size() >= 8 + n_lab, Errc::truncated, "label payload truncated");

  LabeledDataset out;
  out.features.resize(static_cast<Eigen::Index>(n_img), static_cast<Eigen::Index>(pixels));
  out.labels.resize(n_lab);
  for (std::size_t i = 0; i < n_img; ++i)
    for (std::size_t p = 0; p < pixels; ++p)
      out.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) =
          img[16 + i * pixels + p] / 255.0;
  int max_label = 0;
  for (std::size_t i = 0; i < n_lab; ++i) {
    out.labels[i] = lab[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.num_classes = n_lab == 0 ? 1 : max_label + 1;
  return out;
}

void write_idx(const LabeledDataset& data, std::size_t rows, std::size_t cols,
               const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  data.validate();
  require(rows * cols == data.dim(), Errc::dimension_mismatch, "rows*cols must equal feature dim");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  require(img && lab, Errc::io, "cannot open IDX output files");

  put_be32(img, kImageMagic);
  put_be32(img, static_cast<std::uint32_t>(data.size()));
  put_be32(img, static_cast<std::uint32_t>(rows));
  put_be32(img, static_cast<std::uint32_t>(cols));
  for (Eigen::Index i = 0; i < data.features.rows(); ++i)
    for (Eigen::Index p = 0; p < data.features.cols(); ++p) {
      const double v = std::clamp(std::round(data.features(i, p) * 255.0), 0.0, 255.0);
      img.put(static_cast<char>(static_cast<unsigned char>(v)));
    }

  put_be32(lab, kLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int l : data.labels) lab.put(static_cast<char>(static_cast<unsigned char>(l)));
}

std::vector<LinRegClientData> synth_linreg(std::size_t m, std::size_t N, std::size_t d, double b,
                                           double sigma, const ThetaSpec& theta_gen,
                                           std::uint64_t seed) {
  require(m >= 1, Errc::invalid_argument, "synth_linreg: m must be >= 1");
  require(d >= 1, Errc::invalid_argument, "synth_linreg: d must be >= 1");
  require(N >= d, Errc::invalid_argument, "synth_linreg: need N >= d for an orthogonal design");
  require(b > 0, Errc::invalid_argument, "synth_linreg: design scale b must be positive");
  require(sigma >= 0, Errc::invalid_argument, "synth_linreg: sigma must be nonnegative");
  if (theta_gen.mode == ThetaMode::fixed)
    require(theta_gen.fixed.size() == m, Errc::invalid_argument,
            "synth_linreg: fixed theta list must have one entry per client");

  std::normal_distribution<double> normal(0.0, 1.0);
  Rng theta_rng = make_rng(seed, Stream::data, {0});
  ParamVector center = ParamVector::Zero(static_cast<Eigen::Index>(d));
  for (Eigen::Index k = 0; k < center.size(); ++k)
    center[k] = theta_gen.center_scale * normal(theta_rng);

  std::vector<LinRegClientData> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    LinRegClientData c;
    c.b = b;
    c.sigma = sigma;

    switch (theta_gen.mode) {
      case ThetaMode::fixed:
        c.true_theta = theta_gen.fixed[i];
        require(static_cast<std::size_t>(c.true_theta.size()) == d, Errc::dimension_mismatch,
                "synth_linreg: fixed theta has wrong dimension");
        break;
      case ThetaMode::gaussian:
      case ThetaMode::equal_norm: {
        c.true_theta = center;
        for (Eigen::Index k = 0; k < c.true_theta.size(); ++k)
          c.true_theta[k] += theta_gen.spread * normal(theta_rng);
        if (theta_gen.mode == ThetaMode::equal_norm) {
          const double n = c.true_theta.norm();
          require(n > 0, Errc::invalid_argument, "synth_linreg: zero draw in equal_norm mode");
          c.true_theta *= theta_gen.norm / n;
        }
        break;
      }
    }

    Rng design_rng = make_rng(seed, Stream::data, {1, i});
    Eigen::MatrixXd G(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d));
    for (Eigen::Index r = 0; r < G.rows(); ++r)
      for (Eigen::Index k = 0; k < G.cols(); ++k) G(r, k) = normal(design_rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(G.rows(), G.cols());
    c.X = Q * std::sqrt(static_cast<double>(N) * b);

    Rng noise_rng = make_rng(seed, Stream::data, {2, i});
    c.y = c.X * c.true_theta;
    for (Eigen::Index r = 0; r < c.y.size(); ++r) c.y[r] += sigma * normal(noise_rng);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Eigen::VectorXd> redraw_targets(const std::vector<LinRegClientData>& clients,
                                            std::uint64_t seed) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(clients.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < clients.size(); ++i) {
    Rng rng = make_rng(seed, Stream::data, {3, i});
    Eigen::VectorXd y = clients[i].X * clients[i].true_theta;
    for (Eigen::Index r = 0; r < y.size(); ++r) y[r] += clients[i].sigma * normal(rng);
    out.push_back(std::move(y));
  }
  return out;
}

ParamVector least_squares(const Matrix& X, const Eigen::VectorXd& y) {
  require(X.rows() == y.size(), Errc::dimension_mismatch, "least_squares: row mismatch");
  const Eigen::MatrixXd gram = X.transpose() * X;
  return gram.ldlt().solve(X.transpose() * y);
}

LabeledDataset synth_classification(std::size_t m, std::size_t n_per_client, std::size_t d,
                                    int num_classes, double separation, std::uint64_t seed) {
  require(num_classes >= 2, Errc::invalid_argument, "synth_classification: need C >= 2");
  require(d >= 1, Errc::invalid_argument, "synth_classification: need d >= 1");
  require(separation >= 0, Errc::invalid_argument, "synth_classification: negative separation");

  std::normal_distribution<double> normal(0.0, 1.0);
  Rng rng = make_rng(seed, Stream::data, {10});

  // Class means: scaled basis vectors when C <= d (pairwise distance == separation),
  // otherwise random unit directions.
  const auto C = static_cast<std::size_t>(num_classes);
  std::vector<Eigen::VectorXd> means(C, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d)));
  for (std::size_t k = 0; k < C; ++k) {
    if (C <= d) {
      means[k][static_cast<Eigen::Index>(k)] = separation / std::sqrt(2.0);
    } else {
      for (Eigen::Index j = 0; j < means[k].size(); ++j) means[k][j] = normal(rng);
      means[k] *= (separation / std::sqrt(2.0)) / means[k].norm();
    }
  }

  const std::size_t n = m * n_per_client;
  LabeledDataset out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  out.labels.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    const auto k = s % C;
    out.labels[s] = static_cast<int>(k);
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j)
      out.features(static_cast<Eigen::Index>(s), j) = means[k][j] + normal(rng);
  }
  return out;
}

TrainTestSplit split_indices(std::size_t n, double test_fraction, std::uint64_t seed) {
  require(test_fraction >= 0 && test_fraction < 1, Errc::invalid_argument,
          "test_fraction must be in [0, 1)");
  IndexList order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, Stream::split);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  TrainTestSplit out;
  out.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  out.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(out.test.begin(), out.test.end());
  std::sort(out.train.begin(), out.train.end());
  return out;
}

}  // namespace flame
