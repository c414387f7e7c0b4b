#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace imic {

/// A * B^T for unit-norm rows. Throws ContractError on a width mismatch.
Eigen::MatrixXd pairwise_cosine(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Row-normalized copy; zero rows stay zero.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m);

/// True-accept rate at a false-accept rate. The threshold is the smallest
/// score keeping the fraction of impostors scoring >= threshold at or below
/// `far`; a score equal to the threshold is accepted.
double tar_at_far(std::span<const double> genuine, std::span<const double> impostor,
                  double far);

/// Mann-Whitney AUC: P(genuine > impostor) + P(tie) / 2.
double roc_auc(std::span<const double> genuine, std::span<const double> impostor);

/// Fraction of probes with a same-id gallery item among their k most similar
/// (cosine, ties by gallery index). Throws ContractError when a probe id is
/// missing from the gallery.
double rank_k(const Eigen::MatrixXd& probe, std::span<const int> probe_ids,
              const Eigen::MatrixXd& gallery, std::span<const int> gallery_ids, int k);

/// Ten-fold verification accuracy: contiguous folds; the threshold for each
/// fold maximizes accuracy on the other nine (ties to the lowest threshold)
/// and is scored on the held-out fold. Pairs with score >= threshold are
/// predicted "same". Returns the mean over folds.
double verification_accuracy(std::span<const double> scores, std::span<const bool> same,
                             int folds = 10);

/// Fraction of rows whose true class is among the k nearest class centroids
/// (cosine to the normalized centroid of each class in `reference`).
double nearest_centroid_topk(const Eigen::MatrixXd& reference, std::span<const int> ref_labels,
                             const Eigen::MatrixXd& query, std::span<const int> query_labels,
                             int k);

/// Genuine and impostor cosine scores over all unordered pairs of rows.
struct PairScores {
  std::vector<double> genuine;
  std::vector<double> impostor;
};
PairScores all_pair_scores(const Eigen::MatrixXd& embeddings, std::span<const int> labels);

// ---------------------------------------------------------------------------

enum class IndexMode { kExpert, kHuman };

/// Rows are models, columns (metric, dataset) pairs. Missing entries are NaN.
struct ScoreTable {
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  Eigen::MatrixXd values;
  // Human reference per column name, where one exists.
  std::map<std::string, double> human;

  int column_index(const std::string& name) const;
  /// Column-wise maximum over rows with an entry; NaN for empty columns.
  Eigen::VectorXd column_max() const;
};

/// Expert: mean over columns of (a_ij - max_j) / max_j.
/// Human: the same over columns that have a human reference.
/// Throws ContractError on a missing entry in a used column or a
/// nonpositive reference.
double multitask_index(const ScoreTable& table, std::size_t row, IndexMode mode);

/// Comma-separated, header row "model,<col>,...", "--" marks a missing entry.
ScoreTable read_score_table(std::istream& in);
ScoreTable read_score_table(const std::filesystem::path& path);
/// Writes the table; each entry of `extra` is appended as a column.
void write_score_table(std::ostream& out, const ScoreTable& table,
                       const std::vector<std::pair<std::string, std::vector<double>>>& extra = {});

/// Formats a double so that equal values print to equal bytes.
std::string format_number(double value);

}  // namespace imic
