#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "imic/error.hpp"
#include "imic/geometry.hpp"
#include "imic/metrics.hpp"
#include "imic/rng.hpp"

using namespace imic;

namespace {

const double kPi = std::acos(-1.0);

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n;
  return Eigen::MatrixXd::NullaryExpr(rows, cols, [&]() { return n(rng); });
}

// Eigendecomposition of the sample covariance, descending.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> covariance_oracle(const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  return {es.eigenvalues().reverse(), es.eigenvectors().rowwise().reverse()};
}

Eigen::MatrixXd columns(std::initializer_list<Eigen::VectorXd> cols) {
  Eigen::MatrixXd m(cols.begin()->size(), static_cast<Eigen::Index>(cols.size()));
  Eigen::Index j = 0;
  for (const auto& c : cols) m.col(j++) = c;
  return m;
}

Eigen::VectorXd e(int i, int d) { return Eigen::VectorXd::Unit(d, i); }

}  // namespace

TEST(Pca, LineInThreeDimensions) {
  Rng rng(1);
  std::normal_distribution<double> n;
  Eigen::Vector3d dir(1, 2, -2);
  dir.normalize();
  Eigen::MatrixXd x(50, 3);
  for (int i = 0; i < 50; ++i) x.row(i) = (3.0 * n(rng)) * dir.transpose();
  const auto s = pca(x);
  EXPECT_GT(s.eigvals(0), 1.0);
  EXPECT_LT(s.eigvals(1), 1e-20);
  EXPECT_NEAR(std::abs(s.basis.col(0).dot(dir)), 1.0, 1e-12);
  EXPECT_EQ(numerical_rank(s), 1);
}

TEST(Pca, FullBasisReconstructs) {
  Rng rng(2);
  const auto x = gaussian(30, 5, rng);
  const auto s = pca(x);
  const Eigen::MatrixXd c = x.rowwise() - s.mean.transpose();
  const Eigen::MatrixXd back = (c * s.basis) * s.basis.transpose();
  EXPECT_LT((back - c).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Pca, MatchesCovarianceOracleAndDuplication) {
  Rng rng(3);
  Eigen::MatrixXd x = gaussian(40, 4, rng);
  x.col(0) *= 3.0;
  x.col(2) *= 0.5;
  const auto s = pca(x);
  const auto [vals, vecs] = covariance_oracle(x);
  for (int k = 0; k < 4; ++k) {
    EXPECT_NEAR(s.eigvals(k), vals(k), 1e-10);
    EXPECT_NEAR(std::abs(s.basis.col(k).dot(vecs.col(k))), 1.0, 1e-10);
  }
  Eigen::MatrixXd xx(80, 4);
  xx << x, x;
  const auto d = pca(xx);
  for (int k = 0; k < 4; ++k) {
    EXPECT_NEAR(d.basis.col(k).dot(s.basis.col(k)), 1.0, 1e-10);  // sign convention holds
    EXPECT_NEAR(d.eigvals(k), s.eigvals(k) * 78.0 / 79.0, 1e-10);
  }
}

TEST(TaskSubspace, Truncation) {
  Rng rng(4);
  const Eigen::MatrixXd x = gaussian(60, 2, rng) * gaussian(2, 6, rng);  // rank 2
  EXPECT_EQ(task_subspace(x, 0.99).dim(), 2);
  EXPECT_EQ(task_subspace(x, 1.0).dim(), 2);

  const auto iso = gaussian(2000, 10, rng);
  const auto sub = task_subspace(iso, 0.99);
  EXPECT_GE(sub.dim(), 9);
  const auto [vals, vecs] = covariance_oracle(iso);
  Eigen::Index k = 0;
  double acc = 0.0;
  while (acc < 0.99 * vals.sum()) acc += vals(k++);
  EXPECT_EQ(sub.dim(), k);
}

TEST(PrincipalAngles, IdenticalSubspaces) {
  Rng rng(5);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(gaussian(8, 3, rng))
                                .householderQ() * Eigen::MatrixXd::Identity(8, 3);
  for (double a : principal_angles(q, q)) EXPECT_LT(a, 1e-8);
  // A different orthonormal basis of the same span.
  const Eigen::MatrixXd rot = Eigen::HouseholderQR<Eigen::MatrixXd>(gaussian(3, 3, rng))
                                  .householderQ();
  for (double a : principal_angles(q, q * rot)) EXPECT_LT(a, 1e-8);
}

TEST(PrincipalAngles, OrthogonalPlanes) {
  const auto a = principal_angles(columns({e(0, 4), e(1, 4)}), columns({e(2, 4), e(3, 4)}));
  ASSERT_EQ(a.size(), 2u);
  for (double v : a) EXPECT_NEAR(v, kPi / 2, 1e-8);
}

TEST(PrincipalAngles, SharedAxis) {
  const Eigen::VectorXd mixed = (e(1, 4) + e(2, 4)) / std::sqrt(2.0);
  const auto a = principal_angles(columns({e(0, 4), e(1, 4)}), columns({e(0, 4), mixed}));
  ASSERT_EQ(a.size(), 2u);
  EXPECT_NEAR(a[0], 0.0, 1e-8);
  EXPECT_NEAR(a[1], kPi / 4, 1e-8);
}

TEST(PrincipalAngles, PlaneAgainstLine) {
  const Eigen::VectorXd tilted = std::cos(0.3) * e(0, 3) + std::sin(0.3) * e(2, 3);
  const auto a = principal_angles(columns({e(0, 3), e(1, 3)}), columns({tilted}));
  ASSERT_EQ(a.size(), 1u);
  EXPECT_NEAR(a[0], 0.3, 1e-12);
}

TEST(PrincipalAngles, TinyAngleIsResolved) {
  const double t = 1e-9;
  const Eigen::VectorXd tilted = std::cos(t) * e(0, 3) + std::sin(t) * e(1, 3);
  const auto a = principal_angles(columns({e(0, 3)}), columns({tilted}));
  EXPECT_NEAR(a[0], t, 1e-15);
}

namespace {

std::pair<Eigen::MatrixXd, std::vector<int>> clusters(int per, Rng& rng, double sep, int dims) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd x(4 * per, dims);
  std::vector<int> y;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < per; ++i) {
      for (int j = 0; j < dims; ++j) x(c * per + i, j) = n(rng) + (j == c ? sep : 0.0);
      y.push_back(c);
    }
  return {x, y};
}

// Best single-threshold accuracy on 1-D data, either orientation.
double threshold_oracle(const Eigen::VectorXd& v, const std::vector<int>& y) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    for (int orient : {0, 1}) {
      long c = 0;
      for (Eigen::Index k = 0; k < v.size(); ++k)
        c += ((v(k) >= v(i)) == (y[static_cast<std::size_t>(k)] == orient)) ? 1 : 0;
      best = std::max(best, static_cast<double>(c) / static_cast<double>(v.size()));
    }
  return best;
}

}  // namespace

TEST(Probe, SeparatedClustersAreDecodable) {
  Rng rng(6);
  auto [x, y] = clusters(40, rng, 50.0, 5);
  const auto r = linear_task_probe(x, y);
  EXPECT_EQ(r.mean, 1.0);
  EXPECT_EQ(r.fold_accuracies.size(), 10u);
}

TEST(Probe, ShuffledLabelsNearChance) {
  Rng rng(7);
  auto [x, y] = clusters(100, rng, 5.0, 5);
  std::shuffle(y.begin(), y.end(), rng);
  EXPECT_NEAR(linear_task_probe(x, y).mean, 0.25, 0.07);
}

TEST(Probe, OverlapMatchesThresholdOracle) {
  // Two tasks on a line: task 0 uniform on [0, 1], task 1 on [1 - q, 2 - q].
  const double q = 0.3;
  const int n = 400;
  Eigen::MatrixXd x(2 * n, 1);
  std::vector<int> y;
  for (int i = 0; i < n; ++i) {
    x(i, 0) = (i + 0.5) / n;
    y.push_back(0);
  }
  for (int i = 0; i < n; ++i) {
    x(n + i, 0) = 1.0 - q + (i + 0.25) / n;
    y.push_back(1);
  }
  const double oracle = threshold_oracle(x.col(0), y);
  EXPECT_NEAR(oracle, 1.0 - q / 2.0, 2.0 / n);
  EXPECT_NEAR(linear_task_probe(x, y).mean, oracle, 0.02);
}

TEST(Probe, TooFewSamplesPerLabel) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(12, 2);
  std::vector<int> y(12, 0);
  y[0] = y[1] = 1;
  EXPECT_THROW(linear_task_probe(x, y), ContractError);
}

TEST(SlidingWindow, InformationInLeadingDims) {
  Rng rng(8);
  const int per = 60, d = 8;
  std::normal_distribution<double> n;
  Eigen::MatrixXd x(4 * per, d);
  std::vector<int> y;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < per; ++i) {
      const int r = c * per + i;
      for (int j = 0; j < d; ++j) x(r, j) = n(rng);
      // Task signal of large variance in three dimensions.
      x(r, 0) += 12.0 * (c & 1 ? 1 : -1);
      x(r, 1) += 12.0 * (c & 2 ? 1 : -1);
      x(r, 2) += 12.0 * (c == 0 ? 1 : -1) * 0.5;
      y.push_back(c);
    }
  const auto curve = sliding_window_probe(x, y, 3);
  ASSERT_EQ(curve.size(), static_cast<std::size_t>(d - 3 + 1));
  EXPECT_EQ(curve.front().window_start, 1);
  EXPECT_GT(curve.front().mean, 0.95);
  EXPECT_LT(curve.back().mean, 0.45);

  const auto full = sliding_window_probe(x, y, d);
  ASSERT_EQ(full.size(), 1u);
  const auto s = pca(x);
  const Eigen::MatrixXd coords = (x.rowwise() - s.mean.transpose()) * s.basis;
  EXPECT_DOUBLE_EQ(full[0].mean, linear_task_probe(coords, y).mean);
  EXPECT_THROW(sliding_window_probe(x, y, d + 1), ContractError);
}

TEST(Projection, FullUncenteredBasisPreservesAuc) {
  Rng rng(9);
  const auto src = gaussian(50, 6, rng);
  Eigen::MatrixXd tgt = normalize_rows(gaussian(40, 6, rng));
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(i / 4);
  const EmbeddingMetric auc = [&](const Eigen::MatrixXd& f) {
    const auto p = all_pair_scores(normalize_rows(f), labels);
    return roc_auc(p.genuine, p.impostor);
  };
  const auto basis = uncentered_basis(src);
  const auto r = cross_task_projection_eval(basis, basis.dim(), tgt, auc);
  EXPECT_LT(std::abs(r.delta), 1e-10);
}

TEST(Projection, OneDirectionLosesSpreadInformation) {
  Rng rng(10);
  std::normal_distribution<double> n;
  // Target identities spread across all 8 dims; source variance on dim 0.
  Eigen::MatrixXd tgt(80, 8);
  std::vector<int> labels;
  const auto centers = gaussian(20, 8, rng);
  for (int i = 0; i < 80; ++i) {
    tgt.row(i) = centers.row(i / 4) + 0.1 * gaussian(1, 8, rng);
    labels.push_back(i / 4);
  }
  Eigen::MatrixXd src = 0.01 * gaussian(50, 8, rng);
  for (int i = 0; i < 50; ++i) src(i, 0) += 5.0 * n(rng);
  const EmbeddingMetric auc = [&](const Eigen::MatrixXd& f) {
    const auto p = all_pair_scores(normalize_rows(f), labels);
    return roc_auc(p.genuine, p.impostor);
  };
  const auto r = cross_task_projection_eval(uncentered_basis(src), 1, tgt, auc);
  EXPECT_LT(r.delta, -0.2);
}

TEST(Exports, HeadersAndRows) {
  std::ostringstream a, b, c;
  write_probe_curve(a, {{1, 0.9, 0.01}, {2, 0.5, 0.02}});
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "window_start,accuracy_mean,accuracy_std");
  write_angles(b, {0.0, 0.5});
  const std::string angles = b.str();
  EXPECT_EQ(std::count(angles.begin(), angles.end(), '\n'), 3);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 3);
  const std::vector<std::string> tags{"a", "a", "b", "b", "b"};
  write_projection_2d(c, x, tags);
  const std::string points = c.str();
  EXPECT_EQ(std::count(points.begin(), points.end(), '\n'), 6);
}
