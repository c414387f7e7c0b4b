#include "imic/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "imic/error.hpp"

namespace imic {
namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Eigen::MatrixXd pairwise_cosine(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw ContractError("pairwise_cosine: dimension mismatch");
  return a * b.transpose();
}

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double n = out.row(r).norm();
    if (n > 0.0) out.row(r) /= n;
  }
  return out;
}

double tar_at_far(std::span<const double> genuine, std::span<const double> impostor,
                  double far) {
  if (genuine.empty() || impostor.empty()) throw ContractError("tar_at_far: empty score set");
  if (!(far > 0.0 && far < 1.0)) throw ContractError("tar_at_far: far must lie in (0, 1)");
  std::vector<double> imp(impostor.begin(), impostor.end());
  std::sort(imp.begin(), imp.end(), std::greater<>());
  const double n = static_cast<double>(imp.size());
  const auto allowed = static_cast<std::size_t>(std::floor(far * n * (1.0 + 1e-12)));
  if (allowed >= imp.size()) return 1.0;
  // The smallest admissible threshold lies just above this impostor score.
  const double bar = imp[allowed];
  const auto accepted =
      std::count_if(genuine.begin(), genuine.end(), [bar](double s) { return s > bar; });
  return static_cast<double>(accepted) / static_cast<double>(genuine.size());
}

double roc_auc(std::span<const double> genuine, std::span<const double> impostor) {
  if (genuine.empty() || impostor.empty()) throw ContractError("roc_auc: empty score set");
  std::vector<double> imp(impostor.begin(), impostor.end());
  std::sort(imp.begin(), imp.end());
  double wins = 0.0;
  for (double g : genuine) {
    const auto lo = std::lower_bound(imp.begin(), imp.end(), g);
    const auto hi = std::upper_bound(lo, imp.end(), g);
    wins += static_cast<double>(lo - imp.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(genuine.size()) * static_cast<double>(imp.size()));
}

double rank_k(const Eigen::MatrixXd& probe, std::span<const int> probe_ids,
              const Eigen::MatrixXd& gallery, std::span<const int> gallery_ids, int k) {
  if (static_cast<std::size_t>(probe.rows()) != probe_ids.size() ||
      static_cast<std::size_t>(gallery.rows()) != gallery_ids.size())
    throw ContractError("rank_k: one id per row required");
  if (probe_ids.empty()) throw ContractError("rank_k: no probes");
  if (k < 1) throw ContractError("rank_k: k must be >= 1");
  const std::set<int> present(gallery_ids.begin(), gallery_ids.end());
  for (int id : probe_ids)
    if (!present.count(id))
      throw ContractError("rank_k: probe id " + std::to_string(id) + " absent from gallery");

  const Eigen::MatrixXd sim = pairwise_cosine(probe, gallery);
  const auto g = static_cast<std::size_t>(gallery.rows());
  const auto top = std::min<std::size_t>(static_cast<std::size_t>(k), g);
  std::vector<std::size_t> order(g);
  long hits = 0;
  for (Eigen::Index p = 0; p < probe.rows(); ++p) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double sa = sim(p, static_cast<Eigen::Index>(a));
                        const double sb = sim(p, static_cast<Eigen::Index>(b));
                        return sa > sb || (sa == sb && a < b);
                      });
    for (std::size_t r = 0; r < top; ++r) {
      if (gallery_ids[order[r]] == probe_ids[static_cast<std::size_t>(p)]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(probe.rows());
}

double verification_accuracy(std::span<const double> scores, std::span<const bool> same,
                             int folds) {
  const std::size_t n = scores.size();
  if (same.size() != n) throw ContractError("verification_accuracy: one label per pair");
  if (folds < 2) throw ContractError("verification_accuracy: folds must be >= 2");
  if (n < static_cast<std::size_t>(folds))
    throw ContractError("verification_accuracy: fewer pairs than folds");
  const auto positives = std::count(same.begin(), same.end(), true);
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(n))
    throw ContractError("verification_accuracy: both classes must be present");

  const auto fold_of = [&](std::size_t i) {
    return static_cast<int>(i * static_cast<std::size_t>(folds) / n);
  };
  double total = 0.0;
  for (int f = 0; f < folds; ++f) {
    std::vector<std::pair<double, bool>> train;
    for (std::size_t i = 0; i < n; ++i)
      if (fold_of(i) != f) train.emplace_back(scores[i], same[i]);
    std::sort(train.begin(), train.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    // Candidate thresholds sit midway between adjacent distinct train scores,
    // plus -inf (everything "same") and +inf. Ties keep the lowest.
    long correct = 0;
    for (const auto& [s, y] : train) correct += y ? 1 : 0;
    long best = correct;
    double best_threshold = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < train.size();) {
      std::size_t k = j;
      while (k < train.size() && train[k].first == train[j].first) {
        correct += train[k].second ? -1 : 1;
        ++k;
      }
      const double next = k < train.size() ? 0.5 * (train[j].first + train[k].first)
                                           : std::numeric_limits<double>::infinity();
      if (correct > best) {
        best = correct;
        best_threshold = next;
      }
      j = k;
    }

    long fold_correct = 0, fold_size = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (fold_of(i) != f) continue;
      ++fold_size;
      if ((scores[i] >= best_threshold) == same[i]) ++fold_correct;
    }
    total += static_cast<double>(fold_correct) / static_cast<double>(fold_size);
  }
  return total / folds;
}

double nearest_centroid_topk(const Eigen::MatrixXd& reference, std::span<const int> ref_labels,
                             const Eigen::MatrixXd& query, std::span<const int> query_labels,
                             int k) {
  if (static_cast<std::size_t>(reference.rows()) != ref_labels.size() ||
      static_cast<std::size_t>(query.rows()) != query_labels.size())
    throw ContractError("nearest_centroid_topk: one label per row required");
  if (query.rows() == 0) throw ContractError("nearest_centroid_topk: no queries");
  const std::set<int> classes(ref_labels.begin(), ref_labels.end());
  std::vector<int> class_ids(classes.begin(), classes.end());
  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(class_ids.size()),
                                                    reference.cols());
  for (std::size_t r = 0; r < ref_labels.size(); ++r) {
    const auto c = std::lower_bound(class_ids.begin(), class_ids.end(), ref_labels[r]) -
                   class_ids.begin();
    centroids.row(c) += reference.row(static_cast<Eigen::Index>(r));
  }
  std::vector<int> gallery_ids = class_ids;
  for (int id : query_labels)
    if (!classes.count(id))
      throw ContractError("nearest_centroid_topk: query class absent from reference");
  return rank_k(normalize_rows(query), query_labels, normalize_rows(centroids), gallery_ids, k);
}

PairScores all_pair_scores(const Eigen::MatrixXd& embeddings, std::span<const int> labels) {
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size())
    throw ContractError("all_pair_scores: one label per row required");
  const Eigen::MatrixXd sim = pairwise_cosine(embeddings, embeddings);
  PairScores out;
  for (Eigen::Index i = 0; i < sim.rows(); ++i)
    for (Eigen::Index j = i + 1; j < sim.cols(); ++j)
      (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]
           ? out.genuine
           : out.impostor)
          .push_back(sim(i, j));
  return out;
}

int ScoreTable::column_index(const std::string& name) const {
  for (std::size_t j = 0; j < columns.size(); ++j)
    if (columns[j] == name) return static_cast<int>(j);
  return -1;
}

Eigen::VectorXd ScoreTable::column_max() const {
  Eigen::VectorXd out(values.cols());
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    double m = std::numeric_limits<double>::quiet_NaN();
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      const double v = values(i, j);
      if (!std::isnan(v) && (std::isnan(m) || v > m)) m = v;
    }
    out(j) = m;
  }
  return out;
}

double multitask_index(const ScoreTable& table, std::size_t row, IndexMode mode) {
  if (row >= static_cast<std::size_t>(table.values.rows()))
    throw ContractError("multitask_index: row out of range");
  const auto r = static_cast<Eigen::Index>(row);
  std::vector<std::pair<Eigen::Index, double>> refs;
  if (mode == IndexMode::kExpert) {
    const Eigen::VectorXd max = table.column_max();
    for (Eigen::Index j = 0; j < max.size(); ++j) refs.emplace_back(j, max(j));
  } else {
    for (const auto& [name, value] : table.human) {
      const int j = table.column_index(name);
      if (j < 0) throw ContractError("human reference column '" + name + "' not in table");
      refs.emplace_back(j, value);
    }
    std::sort(refs.begin(), refs.end());
  }
  if (refs.empty()) throw ContractError("multitask_index: no reference columns");
  double sum = 0.0;
  for (const auto& [j, ref] : refs) {
    const std::string& col = table.columns[static_cast<std::size_t>(j)];
    if (!(ref > 0.0)) throw ContractError("reference for column '" + col + "' must be positive");
    const double a = table.values(r, j);
    if (std::isnan(a))
      throw ContractError("row '" + table.rows[row] + "' has no entry for column '" + col + "'");
    sum += (a - ref) / ref;
  }
  return sum / static_cast<double>(refs.size());
}

ScoreTable read_score_table(std::istream& in) {
  ScoreTable table;
  std::string line;
  std::vector<std::vector<double>> rows;
  bool header = false;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv(line);
    if (!header) {
      if (cells.size() < 2) throw ValidationError("header", "needs a model column and >= 1 metric");
      table.columns.assign(cells.begin() + 1, cells.end());
      header = true;
      continue;
    }
    if (cells.size() != table.columns.size() + 1)
      throw ValidationError("row " + std::to_string(rows.size() + 1),
                            "expected " + std::to_string(table.columns.size() + 1) + " cells");
    table.rows.push_back(cells[0]);
    std::vector<double> values;
    for (std::size_t j = 1; j < cells.size(); ++j) {
      const std::string& c = cells[j];
      if (c == "--" || c.empty()) {
        values.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || ptr != c.data() + c.size())
        throw ValidationError("row '" + cells[0] + "' column '" + table.columns[j - 1] + "'",
                              "not a number: " + c);
      values.push_back(v);
    }
    rows.push_back(std::move(values));
  }
  if (!header) throw ValidationError("header", "empty score table");
  table.values.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(table.columns.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return table;
}

ScoreTable read_score_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read score table " + path.string());
  return read_score_table(in);
}

std::string format_number(double value) {
  if (std::isnan(value)) return "--";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void write_score_table(std::ostream& out, const ScoreTable& table,
                       const std::vector<std::pair<std::string, std::vector<double>>>& extra) {
  out << "model";
  for (const auto& c : table.columns) out << ',' << c;
  for (const auto& [name, col] : extra) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    out << table.rows[i];
    for (Eigen::Index j = 0; j < table.values.cols(); ++j)
      out << ',' << format_number(table.values(static_cast<Eigen::Index>(i), j));
    for (const auto& [name, col] : extra) out << ',' << format_number(col.at(i));
    out << '\n';
  }
}

}  // namespace imic
