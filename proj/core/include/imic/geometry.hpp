#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace imic {

/// Orthonormal basis (one direction per column) with its variance spectrum.
struct Subspace {
  Eigen::MatrixXd basis;    // d x k, orthonormal columns
  Eigen::VectorXd eigvals;  // length k, nonincreasing
  Eigen::VectorXd mean;     // length d; zero for uncentered bases
  std::string source_task;
  Eigen::Index samples = 0;  // rows of the decomposed matrix

  Eigen::Index dim() const { return basis.cols(); }
  Eigen::Index ambient_dim() const { return basis.rows(); }
  /// The leading `k` directions. Throws ContractError if k exceeds dim().
  Subspace truncated(Eigen::Index k) const;
};

/// Centered PCA via thin SVD: basis = right singular vectors, eigvals =
/// sigma^2 / (n - 1). Each column's largest-magnitude entry is positive.
/// Throws ContractError for fewer than two rows.
Subspace pca(const Eigen::MatrixXd& x, std::string source_task = {});

/// Same decomposition of the raw (uncentered) matrix; eigvals = sigma^2 / n.
Subspace uncentered_basis(const Eigen::MatrixXd& x, std::string source_task = {});

/// Number of nonnegligible directions (sigma above the usual SVD rank
/// tolerance) in a PCA-style spectrum.
Eigen::Index numerical_rank(const Subspace& s);

/// PCA truncated at the smallest k whose cumulative variance share reaches
/// `variance_fraction` (capped at the numerical rank).
Subspace task_subspace(const Eigen::MatrixXd& x, double variance_fraction = 0.99,
                       std::string source_task = {});

/// Principal angles in [0, pi/2], nondecreasing, min(dim F, dim G) of them.
/// Cosines are the singular values of Q_F^T Q_G; angles whose squared cosine
/// is at least 1/2 are taken from the sines of the residual
/// (I - Q Q^T) Q' instead, which keeps small angles accurate to ~1e-16.
std::vector<double> principal_angles(const Subspace& f, const Subspace& g);
std::vector<double> principal_angles(const Eigen::MatrixXd& qf, const Eigen::MatrixXd& qg);

struct ProbeOptions {
  int folds = 10;
  double ridge = 0.0;
  double gradient_tolerance = 1e-8;
  int max_iterations = 100;
  unsigned long long seed = 0;
};

struct ProbeResult {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation across folds
  std::vector<double> fold_accuracies;
};

/// Multinomial logistic regression (reference-class parameterization,
/// damped Newton with backtracking) predicting `labels` from `features`,
/// scored by stratified k-fold cross validation. Features are standardized
/// with training-fold statistics. Throws ContractError when a label has
/// fewer samples than folds.
ProbeResult linear_task_probe(const Eigen::MatrixXd& features, std::span<const int> labels,
                              const ProbeOptions& options = {});

struct ProbePoint {
  int window_start = 0;  // first PC of the window, 1-based
  double mean = 0.0;
  double stddev = 0.0;
};
using ProbeCurve = std::vector<ProbePoint>;

/// Centered PCA of the pooled embeddings, then linear_task_probe on every
/// run of `window` consecutive PC coordinates. Throws ContractError when the
/// window exceeds the available PCs.
ProbeCurve sliding_window_probe(const Eigen::MatrixXd& embeddings, std::span<const int> labels,
                                int window = 3, const ProbeOptions& options = {});

using EmbeddingMetric = std::function<double(const Eigen::MatrixXd&)>;

struct ProjectionResult {
  double value = 0.0;
  double delta = 0.0;  // value minus the full-space value
};

/// Projects `target` onto the leading k directions of `source` (coordinates
/// in the k-dim subspace, after subtracting source.mean) and evaluates
/// `metric` there. `full_value` is the metric on `target` itself.
ProjectionResult cross_task_projection_eval(const Subspace& source, Eigen::Index k,
                                            const Eigen::MatrixXd& target,
                                            const EmbeddingMetric& metric, double full_value);
ProjectionResult cross_task_projection_eval(const Subspace& source, Eigen::Index k,
                                            const Eigen::MatrixXd& target,
                                            const EmbeddingMetric& metric);

// Delimited-text exports (header row, one record per line).
void write_probe_curve(std::ostream& out, const ProbeCurve& curve);
void write_angles(std::ostream& out, const std::vector<double>& angles);
void write_projection_2d(std::ostream& out, const Eigen::MatrixXd& embeddings,
                         std::span<const std::string> task_tags);

}  // namespace imic
