#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace imic {

inline constexpr double kDefaultMargin = 0.35;

struct TripletResult {
  double loss = 0.0;
  // d(loss)/d(embeddings), same shape as the input.
  Eigen::MatrixXd grad;
  // Fraction of anchors whose hardest positive is strictly nearer than their
  // hardest negative (the online accuracy used by the adaptive curriculum).
  double satisfied_fraction = 0.0;
  std::vector<int> hardest_positive;
  std::vector<int> hardest_negative;
};

/// Batch-hard triplet loss with Euclidean distances between unit rows:
/// mean over anchors of max(0, d_pos - d_neg + margin), where d_pos is the
/// farthest same-id row and d_neg the nearest other-id row (ties to the lowest
/// index). The hinge counts as active at exactly zero. Coincident pairs
/// contribute a zero subgradient.
///
/// Throws ContractError if any id occurs once, or if only one id is present.
TripletResult batch_hard_triplet(const Eigen::MatrixXd& embeddings,
                                 std::span<const int> ids, double margin);

}  // namespace imic
