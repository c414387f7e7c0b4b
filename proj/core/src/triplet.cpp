#include "imic/triplet.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "imic/error.hpp"

namespace imic {

TripletResult batch_hard_triplet(const Eigen::MatrixXd& embeddings,
                                 std::span<const int> ids, double margin) {
  const Eigen::Index n = embeddings.rows();
  if (static_cast<std::size_t>(n) != ids.size())
    throw ContractError("one id per embedding row required");
  std::map<int, int> counts;
  for (int id : ids) ++counts[id];
  for (const auto& [id, count] : counts)
    if (count < 2)
      throw ContractError("id " + std::to_string(id) + " occurs once; positives impossible");
  if (counts.size() < 2) throw ContractError("batch needs at least two ids");

  const Eigen::MatrixXd gram = embeddings * embeddings.transpose();
  const Eigen::VectorXd sq = gram.diagonal();
  auto dist = [&](Eigen::Index i, Eigen::Index j) {
    return std::sqrt(std::max(0.0, sq(i) + sq(j) - 2.0 * gram(i, j)));
  };

  TripletResult out;
  out.grad = Eigen::MatrixXd::Zero(n, embeddings.cols());
  out.hardest_positive.assign(static_cast<std::size_t>(n), -1);
  out.hardest_negative.assign(static_cast<std::size_t>(n), -1);

  // d|a-b|/da = (a-b)/|a-b|, zero for coincident rows.
  auto accumulate = [&](Eigen::Index a, Eigen::Index b, double sign, double scale) {
    const Eigen::RowVectorXd diff = embeddings.row(a) - embeddings.row(b);
    const double d = diff.norm();
    if (d == 0.0) return;
    const Eigen::RowVectorXd g = (sign * scale / d) * diff;
    out.grad.row(a) += g;
    out.grad.row(b) -= g;
  };

  const double inv_n = 1.0 / static_cast<double>(n);
  long satisfied = 0;
  double total = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) {
    double pos = -1.0;
    double neg = std::numeric_limits<double>::infinity();
    Eigen::Index p = -1, q = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == a) continue;
      const double d = dist(a, j);
      if (ids[static_cast<std::size_t>(j)] == ids[static_cast<std::size_t>(a)]) {
        if (d > pos) { pos = d; p = j; }
      } else if (d < neg) {
        neg = d;
        q = j;
      }
    }
    out.hardest_positive[static_cast<std::size_t>(a)] = static_cast<int>(p);
    out.hardest_negative[static_cast<std::size_t>(a)] = static_cast<int>(q);
    if (pos < neg) ++satisfied;
    const double hinge = pos - neg + margin;
    if (hinge >= 0.0) {
      total += hinge;
      accumulate(a, p, 1.0, inv_n);
      accumulate(a, q, -1.0, inv_n);
    }
  }
  out.loss = total * inv_n;
  out.satisfied_fraction = static_cast<double>(satisfied) * inv_n;
  return out;
}

}  // namespace imic
