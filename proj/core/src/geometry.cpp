#include "imic/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include "imic/error.hpp"
#include "imic/metrics.hpp"

namespace imic {
namespace {

constexpr double kPi = 3.14159265358979323846;

void fix_signs(Eigen::MatrixXd& basis) {
  for (Eigen::Index c = 0; c < basis.cols(); ++c) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index r = 0; r < basis.rows(); ++r) {
      if (std::abs(basis(r, c)) > best) {
        best = std::abs(basis(r, c));
        arg = r;
      }
    }
    if (basis(arg, c) < 0.0) basis.col(c) *= -1.0;
  }
}

Subspace decompose(const Eigen::MatrixXd& x, bool centered, std::string source) {
  if (x.rows() < 2) throw ContractError("PCA needs at least two rows");
  Subspace s;
  s.source_task = std::move(source);
  s.samples = x.rows();
  s.mean = centered ? Eigen::VectorXd(x.colwise().mean().transpose())
                    : Eigen::VectorXd::Zero(x.cols());
  const Eigen::MatrixXd centred = x.rowwise() - s.mean.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
  s.basis = svd.matrixV();
  fix_signs(s.basis);
  const double denom = static_cast<double>(centered ? x.rows() - 1 : x.rows());
  s.eigvals = svd.singularValues().array().square() / denom;
  return s;
}

// Reference-class multinomial logistic regression on standardized features.
class SoftmaxProbe {
 public:
  SoftmaxProbe(int classes, const ProbeOptions& options)
      : classes_(classes), options_(options) {}

  void fit(const Eigen::MatrixXd& x, std::span<const int> y) {
    mean_ = x.colwise().mean();
    scale_ = ((x.rowwise() - mean_).array().square().colwise().mean()).sqrt();
    for (Eigen::Index j = 0; j < scale_.size(); ++j)
      if (!(scale_(j) > 1e-300)) scale_(j) = 1.0;
    const Eigen::MatrixXd design = augment(x);
    const Eigen::Index q = design.cols();
    const Eigen::Index free = classes_ - 1;
    const Eigen::Index m = free * q;
    const double n = static_cast<double>(design.rows());

    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(design.rows(), classes_);
    for (Eigen::Index i = 0; i < design.rows(); ++i) onehot(i, y[static_cast<std::size_t>(i)]) = 1.0;

    weights_ = Eigen::MatrixXd::Zero(free, q);
    auto objective = [&](const Eigen::MatrixXd& w, Eigen::MatrixXd* probs) {
      const Eigen::MatrixXd p = softmax(design, w);
      double loss = 0.0;
      for (Eigen::Index i = 0; i < design.rows(); ++i)
        loss -= std::log(std::max(p(i, y[static_cast<std::size_t>(i)]), 1e-300));
      loss = loss / n + 0.5 * options_.ridge * w.squaredNorm();
      if (probs) *probs = p;
      return loss;
    };

    Eigen::MatrixXd p;
    double loss = objective(weights_, &p);
    for (int it = 0; it < options_.max_iterations; ++it) {
      const Eigen::MatrixXd resid = p.leftCols(free) - onehot.leftCols(free);
      Eigen::MatrixXd grad = resid.transpose() * design / n + options_.ridge * weights_;
      const Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(grad.data(), m);
      if (g.norm() < options_.gradient_tolerance) break;

      // Parameter layout matches the column-major flattening of weights_
      // (class index fastest).
      Eigen::MatrixXd hessian = Eigen::MatrixXd::Zero(m, m);
      for (Eigen::Index a = 0; a < free; ++a) {
        for (Eigen::Index b = a; b < free; ++b) {
          Eigen::VectorXd w = -(p.col(a).array() * p.col(b).array()).matrix();
          if (a == b) w += p.col(a);
          const Eigen::MatrixXd block =
              design.transpose() * (design.array().colwise() * w.array()).matrix() / n;
          for (Eigen::Index r = 0; r < q; ++r)
            for (Eigen::Index c = 0; c < q; ++c) {
              hessian(r * free + a, c * free + b) = block(r, c);
              hessian(c * free + b, r * free + a) = block(r, c);
            }
        }
      }
      hessian.diagonal().array() += options_.ridge + 1e-10;
      const Eigen::VectorXd step = hessian.ldlt().solve(g);
      const Eigen::MatrixXd direction = Eigen::Map<const Eigen::MatrixXd>(step.data(), free, q);

      double t = 1.0;
      const double slope = g.dot(step);
      bool accepted = false;
      for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
        Eigen::MatrixXd trial_p;
        const Eigen::MatrixXd trial = weights_ - t * direction;
        const double trial_loss = objective(trial, &trial_p);
        if (trial_loss <= loss - 1e-4 * t * slope) {
          weights_ = trial;
          loss = trial_loss;
          p = std::move(trial_p);
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
    }
  }

  std::vector<int> predict(const Eigen::MatrixXd& x) const {
    const Eigen::MatrixXd logits = logits_of(augment(x), weights_);
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index arg = 0;
      for (Eigen::Index c = 1; c < logits.cols(); ++c)
        if (logits(i, c) > logits(i, arg)) arg = c;
      out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    return out;
  }

 private:
  Eigen::MatrixXd augment(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd design(x.rows(), x.cols() + 1);
    design.leftCols(x.cols()) = (x.rowwise() - mean_).array().rowwise() / scale_.array();
    design.col(x.cols()).setOnes();
    return design;
  }

  Eigen::MatrixXd logits_of(const Eigen::MatrixXd& design, const Eigen::MatrixXd& w) const {
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(design.rows(), classes_);
    z.leftCols(classes_ - 1) = design * w.transpose();
    return z;
  }

  Eigen::MatrixXd softmax(const Eigen::MatrixXd& design, const Eigen::MatrixXd& w) const {
    Eigen::MatrixXd z = logits_of(design, w);
    const Eigen::VectorXd top = z.rowwise().maxCoeff();
    z = (z.colwise() - top).array().exp();
    const Eigen::VectorXd total = z.rowwise().sum();
    z.array().colwise() /= total.array();
    return z;
  }

  Eigen::Index classes_;
  ProbeOptions options_;
  Eigen::RowVectorXd mean_;
  Eigen::RowVectorXd scale_;
  Eigen::MatrixXd weights_;
};

}  // namespace

Subspace Subspace::truncated(Eigen::Index k) const {
  if (k < 0 || k > dim())
    throw ContractError("cannot truncate a " + std::to_string(dim()) + "-dim basis to " +
                        std::to_string(k));
  Subspace out = *this;
  out.basis = basis.leftCols(k);
  out.eigvals = eigvals.head(k);
  return out;
}

Subspace pca(const Eigen::MatrixXd& x, std::string source_task) {
  return decompose(x, true, std::move(source_task));
}

Subspace uncentered_basis(const Eigen::MatrixXd& x, std::string source_task) {
  return decompose(x, false, std::move(source_task));
}

Eigen::Index numerical_rank(const Subspace& s) {
  if (s.eigvals.size() == 0 || !(s.eigvals(0) > 0.0)) return 0;
  const double tol = static_cast<double>(std::max(s.samples, s.ambient_dim())) *
                     std::numeric_limits<double>::epsilon();
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.eigvals.size(); ++i)
    if (std::sqrt(s.eigvals(i) / s.eigvals(0)) > tol) ++rank;
  return rank;
}

Subspace task_subspace(const Eigen::MatrixXd& x, double variance_fraction,
                       std::string source_task) {
  if (!(variance_fraction > 0.0 && variance_fraction <= 1.0))
    throw ContractError("variance fraction must lie in (0, 1]");
  Subspace full = pca(x, std::move(source_task));
  const Eigen::Index rank = numerical_rank(full);
  const double total = full.eigvals.head(rank).sum();
  Eigen::Index k = 0;
  double cumulative = 0.0;
  while (k < rank) {
    cumulative += full.eigvals(k);
    ++k;
    if (cumulative >= variance_fraction * total * (1.0 - 1e-12)) break;
  }
  return full.truncated(k);
}

std::vector<double> principal_angles(const Eigen::MatrixXd& qf, const Eigen::MatrixXd& qg) {
  if (qf.rows() != qg.rows()) throw ContractError("principal_angles: ambient dimension mismatch");
  const Eigen::Index r = std::min(qf.cols(), qg.cols());
  if (r == 0) return {};
  const Eigen::MatrixXd cross = qf.transpose() * qg;
  const Eigen::VectorXd cosines = Eigen::JacobiSVD<Eigen::MatrixXd>(cross).singularValues();
  const Eigen::MatrixXd residual =
      qf.cols() >= qg.cols() ? Eigen::MatrixXd(qg - qf * cross)
                             : Eigen::MatrixXd(qf - qg * cross.transpose());
  const Eigen::VectorXd sines = Eigen::JacobiSVD<Eigen::MatrixXd>(residual).singularValues();

  std::vector<double> angles(static_cast<std::size_t>(r));
  for (Eigen::Index k = 0; k < r; ++k) {
    const double c = std::clamp(cosines(k), 0.0, 1.0);
    if (c * c >= 0.5) {
      const double s = std::clamp(sines(r - 1 - k), 0.0, 1.0);
      angles[static_cast<std::size_t>(k)] = std::asin(s);
    } else {
      angles[static_cast<std::size_t>(k)] = std::acos(c);
    }
  }
  std::sort(angles.begin(), angles.end());
  return angles;
}

std::vector<double> principal_angles(const Subspace& f, const Subspace& g) {
  return principal_angles(f.basis, g.basis);
}

ProbeResult linear_task_probe(const Eigen::MatrixXd& features, std::span<const int> labels,
                              const ProbeOptions& options) {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw ContractError("linear_task_probe: one label per row required");
  if (options.folds < 2) throw ContractError("linear_task_probe: folds must be >= 2");

  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
  if (by_label.size() < 2) throw ContractError("linear_task_probe: needs >= 2 labels");
  std::map<int, int> dense;
  for (const auto& [label, rows] : by_label) {
    if (rows.size() < static_cast<std::size_t>(options.folds))
      throw ContractError("linear_task_probe: label " + std::to_string(label) +
                          " has fewer samples than folds");
    const int next = static_cast<int>(dense.size());
    dense[label] = next;
  }

  std::vector<int> fold(labels.size());
  std::mt19937_64 rng(options.seed);
  for (auto& [label, rows] : by_label) {
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t i = 0; i < rows.size(); ++i)
      fold[rows[i]] = static_cast<int>(i % static_cast<std::size_t>(options.folds));
  }

  ProbeResult result;
  for (int f = 0; f < options.folds; ++f) {
    std::vector<Eigen::Index> train, test;
    for (std::size_t i = 0; i < labels.size(); ++i)
      (fold[i] == f ? test : train).push_back(static_cast<Eigen::Index>(i));
    Eigen::MatrixXd xtr = features(train, Eigen::all);
    Eigen::MatrixXd xte = features(test, Eigen::all);
    std::vector<int> ytr, yte;
    for (auto i : train) ytr.push_back(dense[labels[static_cast<std::size_t>(i)]]);
    for (auto i : test) yte.push_back(dense[labels[static_cast<std::size_t>(i)]]);

    SoftmaxProbe probe(static_cast<int>(dense.size()), options);
    probe.fit(xtr, ytr);
    const auto pred = probe.predict(xte);
    long correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == yte[i] ? 1 : 0;
    result.fold_accuracies.push_back(static_cast<double>(correct) /
                                     static_cast<double>(pred.size()));
  }
  const double k = static_cast<double>(result.fold_accuracies.size());
  result.mean = std::accumulate(result.fold_accuracies.begin(), result.fold_accuracies.end(), 0.0) / k;
  double var = 0.0;
  for (double a : result.fold_accuracies) var += (a - result.mean) * (a - result.mean);
  result.stddev = std::sqrt(var / (k - 1.0));
  return result;
}

ProbeCurve sliding_window_probe(const Eigen::MatrixXd& embeddings, std::span<const int> labels,
                                int window, const ProbeOptions& options) {
  if (window < 1) throw ContractError("sliding_window_probe: window must be >= 1");
  const Subspace s = pca(embeddings);
  if (window > s.dim())
    throw ContractError("sliding_window_probe: window " + std::to_string(window) +
                        " exceeds the " + std::to_string(s.dim()) + " available PCs");
  const Eigen::MatrixXd coords = (embeddings.rowwise() - s.mean.transpose()) * s.basis;
  ProbeCurve curve;
  for (Eigen::Index start = 0; start + window <= s.dim(); ++start) {
    const auto r = linear_task_probe(coords.middleCols(start, window), labels, options);
    curve.push_back({static_cast<int>(start + 1), r.mean, r.stddev});
  }
  return curve;
}

ProjectionResult cross_task_projection_eval(const Subspace& source, Eigen::Index k,
                                            const Eigen::MatrixXd& target,
                                            const EmbeddingMetric& metric, double full_value) {
  if (k < 1) throw ContractError("cross_task_projection_eval: k must be >= 1");
  if (k > source.dim())
    throw ContractError("cross_task_projection_eval: k exceeds the source basis rank");
  if (target.cols() != source.ambient_dim())
    throw ContractError("cross_task_projection_eval: ambient dimension mismatch");
  const Eigen::MatrixXd coords =
      (target.rowwise() - source.mean.transpose()) * source.basis.leftCols(k);
  ProjectionResult out;
  out.value = metric(coords);
  out.delta = out.value - full_value;
  return out;
}

ProjectionResult cross_task_projection_eval(const Subspace& source, Eigen::Index k,
                                            const Eigen::MatrixXd& target,
                                            const EmbeddingMetric& metric) {
  return cross_task_projection_eval(source, k, target, metric, metric(target));
}

void write_probe_curve(std::ostream& out, const ProbeCurve& curve) {
  out << "window_start,accuracy_mean,accuracy_std\n";
  for (const auto& p : curve)
    out << p.window_start << ',' << format_number(p.mean) << ',' << format_number(p.stddev) << '\n';
}

void write_angles(std::ostream& out, const std::vector<double>& angles) {
  out << "index,angle_rad,angle_deg\n";
  for (std::size_t i = 0; i < angles.size(); ++i)
    out << i + 1 << ',' << format_number(angles[i]) << ','
        << format_number(angles[i] * 180.0 / kPi) << '\n';
}

void write_projection_2d(std::ostream& out, const Eigen::MatrixXd& embeddings,
                         std::span<const std::string> task_tags) {
  if (static_cast<std::size_t>(embeddings.rows()) != task_tags.size())
    throw ContractError("write_projection_2d: one tag per row required");
  const Subspace s = pca(embeddings);
  const Eigen::Index k = std::min<Eigen::Index>(2, s.dim());
  const Eigen::MatrixXd coords = (embeddings.rowwise() - s.mean.transpose()) * s.basis.leftCols(k);
  out << "task,pc1,pc2\n";
  for (Eigen::Index i = 0; i < coords.rows(); ++i)
    out << task_tags[static_cast<std::size_t>(i)] << ',' << format_number(coords(i, 0)) << ','
        << format_number(k > 1 ? coords(i, 1) : 0.0) << '\n';
}

}  // namespace imic
