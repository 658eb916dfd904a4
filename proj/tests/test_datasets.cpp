#include <doctest.h>

#include <cmath>

#include "flame/datasets.hpp"
#include "flame/models.hpp"
#include "support.hpp"

using namespace flame;
using namespace flame::testing;

namespace {

std::vector<unsigned char> image_file(std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
                                      const std::vector<unsigned char>& pixels) {
  std::vector<unsigned char> out = be32(0x00000803);
  for (auto v : {count, rows, cols}) {
    auto b = be32(v);
    out.insert(out.end(), b.begin(), b.end());
  }
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<unsigned char> label_file(std::uint32_t count, const std::vector<unsigned char>& labels) {
  std::vector<unsigned char> out = be32(0x00000801);
  auto b = be32(count);
  out.insert(out.end(), b.begin(), b.end());
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

}  // namespace

TEST_CASE("idx pixels are scaled to [0, 1]") {
  const auto dir = scratch_dir("idx_ok");
  std::vector<unsigned char> px(16);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = i % 2 ? 255 : 0;
  write_bytes(dir / "img", image_file(4, 2, 2, px));
  write_bytes(dir / "lbl", label_file(4, {0, 1, 2, 1}));
  const auto data = load_idx(dir / "img", dir / "lbl");
  REQUIRE(data.size() == 4);
  CHECK(data.dim() == 4);
  CHECK(data.num_classes == 3);
  CHECK(data.features(0, 0) == 0.0);
  CHECK(data.features(0, 1) == 1.0);
  CHECK(data.labels == std::vector<int>{0, 1, 2, 1});
}

TEST_CASE("idx error cases") {
  const auto dir = scratch_dir("idx_bad");
  const std::vector<unsigned char> px(40, 7);
  write_bytes(dir / "img10", image_file(10, 2, 2, px));
  write_bytes(dir / "lbl9", label_file(9, std::vector<unsigned char>(9, 1)));
  CHECK(error_code([&] { load_idx(dir / "img10", dir / "lbl9"); }) == Errc::count_mismatch);

  auto bad = image_file(10, 2, 2, px);
  bad[3] = 0x05;
  write_bytes(dir / "badmagic", bad);
  write_bytes(dir / "lbl10", label_file(10, std::vector<unsigned char>(10, 1)));
  CHECK(error_code([&] { load_idx(dir / "badmagic", dir / "lbl10"); }) == Errc::bad_magic);

  write_bytes(dir / "short", image_file(10, 2, 2, std::vector<unsigned char>(30, 1)));
  CHECK(error_code([&] { load_idx(dir / "short", dir / "lbl10"); }) == Errc::truncated);

  CHECK(error_code([&] { load_idx(dir / "missing", dir / "lbl10"); }) == Errc::io);
}

TEST_CASE("idx round trip through write_idx") {
  const auto dir = scratch_dir("idx_rt");
  LabeledDataset d;
  d.features = Matrix::Zero(3, 4);
  d.features(1, 2) = 1.0;
  d.features(2, 3) = 128.0 / 255.0;
  d.labels = {2, 0, 1};
  d.num_classes = 3;
  write_idx(d, 2, 2, dir / "i", dir / "l");
  const auto back = load_idx(dir / "i", dir / "l");
  CHECK(back.labels == d.labels);
  CHECK((back.features - d.features).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("synth_linreg design and noiseless recovery") {
  ThetaSpec spec;
  spec.mode = ThetaMode::fixed;
  spec.fixed = {ParamVector::Unit(2, 0)};
  const auto c = synth_linreg(1, 4, 2, 1.0, 0.0, spec, 3);
  REQUIRE(c.size() == 1);
  const Matrix gram = c[0].X.transpose() * c[0].X;
  CHECK((gram - 4.0 * Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-10);
  const auto hat = least_squares(c[0].X, c[0].y);
  CHECK((hat - ParamVector::Unit(2, 0)).norm() < 1e-12);

  // Reproducible from the seed.
  const auto again = synth_linreg(1, 4, 2, 1.0, 0.0, spec, 3);
  CHECK(again[0].X == c[0].X);
}

TEST_CASE("synth_linreg sigma = 0 recovers each client's parameter") {
  const auto c = synth_linreg(2, 6, 1, 2.0, 0.0, {}, 11);
  for (const auto& k : c) CHECK(std::abs(least_squares(k.X, k.y)[0] - k.true_theta[0]) < 1e-12);
}

TEST_CASE("least-squares estimates have covariance sigma^2/(bN) I") {
  const std::size_t N = 8, d = 2, trials = 10000;
  const double b = 0.5, sigma = 1.0;
  ThetaSpec spec;
  spec.mode = ThetaMode::fixed;
  spec.fixed = {ParamVector::Zero(d)};
  std::vector<double> xs, ys, cross;
  for (std::size_t s = 0; s < trials; ++s) {
    const auto c = synth_linreg(1, N, d, b, sigma, spec, 1000 + s);
    const auto h = least_squares(c[0].X, c[0].y);
    xs.push_back(h[0] * h[0]);
    ys.push_back(h[1] * h[1]);
    cross.push_back(h[0] * h[1]);
  }
  auto mean_se = [](const std::vector<double>& v) {
    double m = 0, m2 = 0;
    for (double x : v) m += x, m2 += x * x;
    m /= v.size();
    m2 /= v.size();
    return std::pair{m, std::sqrt((m2 - m * m) / v.size())};
  };
  const double target = sigma * sigma / (b * N);
  for (const auto* v : {&xs, &ys}) {
    const auto [m, se] = mean_se(*v);
    CHECK(std::abs(m - target) <= 3 * se);
  }
  const auto [mc, sec] = mean_se(cross);
  CHECK(std::abs(mc) <= 3 * sec);
}

TEST_CASE("equal-norm parameters share one norm") {
  ThetaSpec spec;
  spec.mode = ThetaMode::equal_norm;
  spec.norm = 2.5;
  for (const auto& c : synth_linreg(5, 10, 4, 1.0, 0.1, spec, 2)) CHECK(c.true_theta.norm() == doctest::Approx(2.5));
}

TEST_CASE("redraw_targets keeps the design and changes the noise") {
  const auto c = synth_linreg(2, 10, 3, 1.0, 0.3, {}, 5);
  const auto y2 = redraw_targets(c, 99);
  REQUIRE(y2.size() == 2);
  CHECK((y2[0] - c[0].y).norm() > 0);
  const Eigen::VectorXd clean = c[0].X * c[0].true_theta;
  CHECK((y2[0] - clean).norm() < 10 * 0.3 * std::sqrt(10.0));
}

TEST_CASE("synth_classification sizes and balance") {
  const auto d = synth_classification(4, 30, 3, 3, 2.0, 1);
  CHECK(d.size() == 120);
  CHECK(d.dim() == 3);
  std::vector<int> counts(3, 0);
  for (int l : d.labels) ++counts[static_cast<std::size_t>(l)];
  CHECK(counts == std::vector<int>{40, 40, 40});
}

TEST_CASE("separable classes are learnable by a linear model") {
  const auto d = synth_classification(1, 200, 2, 2, 12.0, 4);
  auto store = make_classification_store(d);
  auto model = LossModel::logistic(store, all_positions(d.size()));
  ProxConfig cfg;
  cfg.eta = 0.5;
  cfg.max_passes = 200;
  cfg.batch_size = 0;
  const auto theta = local_sgd(model, init_params(model, 1), cfg);
  CHECK(accuracy(model, theta, model.rows()) >= 0.99);
}

TEST_CASE("without separation accuracy stays near chance") {
  const auto d = synth_classification(1, 2000, 2, 4, 0.0, 6);
  auto store = make_classification_store(d);
  auto model = LossModel::logistic(store, all_positions(d.size()));
  ProxConfig cfg;
  cfg.eta = 0.5;
  cfg.max_passes = 50;
  cfg.batch_size = 0;
  const auto theta = local_sgd(model, init_params(model, 1), cfg);
  CHECK(accuracy(model, theta, model.rows()) < 0.25 + 0.06);
}

TEST_CASE("split_indices is a seeded disjoint cover") {
  const auto s = split_indices(100, 0.2, 3);
  CHECK(s.test.size() == 20);
  CHECK(s.train.size() == 80);
  std::vector<int> seen(100, 0);
  for (auto i : s.train) ++seen[i];
  for (auto i : s.test) ++seen[i];
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
  CHECK(split_indices(100, 0.2, 3).test == s.test);
}
