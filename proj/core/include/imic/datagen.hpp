#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "imic/rng.hpp"

namespace imic {

/// Recognition regimes of differing granularity. Coarse categories tolerate
/// large exemplar variation; fine identities are separated by small
/// differences; the degraded regime re-observes a fine-identity task through
/// isotropic noise; intermediate sits between the two.
enum class Regime {
  kCoarseCategory,
  kFineIdentity,
  kFineIdentityDegraded,
  kIntermediate,
};

std::string_view to_string(Regime regime);
/// Accepts "coarse-category", "fine-identity", "fine-identity-degraded",
/// "intermediate". Throws ValidationError on anything else.
Regime parse_regime(std::string_view text);

struct TaskGenSpec {
  std::string name;
  Regime regime = Regime::kFineIdentity;
  int classes = 0;
  int samples_per_class = 0;
  int test_samples_per_class = 0;
  double within_class_spread = 0.0;
  double between_class_spread = 1.0;
  double degradation_noise = 0.0;
  // Name of the fine-identity task whose centroids and samples a degraded
  // task re-observes. Empty for every other regime.
  std::string twin;
  // Uniform fraction of training samples a balanced loader draws from.
  double subsample_fraction = 1.0;
};

struct CorpusSpec {
  std::vector<TaskGenSpec> tasks;
  std::uint64_t seed = 0;
  int ambient_dim = 0;
  // Norm of the per-task domain offset shared by all samples of a task.
  double domain_separation = 0.0;
  // K of the P x K batch layout; samples_per_class must be at least 2K.
  int positives_per_id = 4;

  /// Throws ValidationError naming the first offending field.
  void validate() const;
};

/// Features are stored one sample per row, column-major.
struct TaskData {
  std::string name;
  Regime regime = Regime::kFineIdentity;
  int classes = 0;
  double subsample_fraction = 1.0;
  Eigen::MatrixXd train;
  std::vector<int> train_labels;
  Eigen::MatrixXd test;
  std::vector<int> test_labels;

  std::size_t size() const { return train_labels.size(); }
};

struct Corpus {
  std::uint64_t seed = 0;
  int ambient_dim = 0;
  std::vector<TaskData> tasks;

  std::size_t total_train_samples() const;
  /// Index of the task called `name`; throws ContractError when absent.
  int index_of(std::string_view name) const;
};

/// Pure function of `spec`: equal specs yield bit-identical corpora.
Corpus build_corpus(const CorpusSpec& spec);

/// Writes `manifest.json` plus one raw little-endian float64 matrix per task
/// split (`<task>.train.f64`, `<task>.test.f64`). Import reproduces the
/// corpus bit for bit.
void export_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus import_corpus(const std::filesystem::path& dir);

struct Batch {
  int task = 0;
  Eigen::MatrixXd features;
  std::vector<int> labels;
  // Indices into the task's training rows.
  std::vector<std::size_t> indices;
  // True where a sample was re-drawn from already-consumed ones to complete
  // an identity's K slots.
  std::vector<bool> reused;
};

struct BatchDraw {
  Batch batch;
  // True on the call that consumed the last unseen sample of the pass. The
  // loader has already refreshed when this is returned.
  bool exhausted = false;
};

/// Single-consumer P x K batch loader over one task's training split.
///
/// Each pass walks a fresh random permutation of the sample pool. Identities
/// are drawn without replacement from those with at least K unconsumed
/// samples (weighted by how many remain); when fewer than P qualify the batch
/// is completed with identities whose leftovers are topped up by
/// re-drawing, with replacement, from their already-consumed samples. Every
/// pool index is consumed exactly once per pass.
class Loader {
 public:
  /// Loads from every training sample of `data`.
  Loader(const TaskData& data, int task_id, Rng rng);
  /// Loads from the given subset of training rows.
  Loader(const TaskData& data, int task_id, std::vector<std::size_t> pool,
         Rng rng);

  /// Throws ConfigError when P*K exceeds the pool, when fewer than P
  /// identities exist, or when an identity has fewer than K samples.
  BatchDraw next_batch(int P, int K);

  int task() const { return task_; }
  std::size_t pool_size() const { return pool_.size(); }
  std::size_t cursor() const { return cursor_; }
  long refreshes() const { return refreshes_; }
  /// Sample order of the current pass (a permutation of the pool).
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  void refresh();
  void check_feasible(int P, int K) const;

  const TaskData* data_;
  int task_;
  std::vector<std::size_t> pool_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  long refreshes_ = 0;
  // Per-identity unconsumed samples (front = next) and consumed samples.
  std::vector<std::vector<std::size_t>> pending_;
  std::vector<std::size_t> pending_head_;
  std::vector<std::vector<std::size_t>> consumed_;
  std::vector<int> identities_;
};

/// Uniform subsample of round(fraction * n) training rows. Identities left
/// with fewer than K rows are topped up to K from their unselected rows.
std::vector<std::size_t> subsample_pool(const TaskData& data, double fraction,
                                        int K, Rng& rng);

}  // namespace imic
