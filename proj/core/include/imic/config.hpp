#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "imic/curriculum.hpp"
#include "imic/datagen.hpp"
#include "imic/encoder.hpp"
#include "imic/optim.hpp"

namespace imic {

inline constexpr int kConfigSchemaVersion = 1;

struct EncoderConfig {
  std::vector<int> hidden{64};
  int output_dim = 16;
  Activation activation = Activation::kTanh;
  double init_gain = 1.0;
};

struct TrainingConfig {
  int epochs = 1;
  // Forgetting comparison: single-task pretraining before fine-tuning.
  std::string pretrain_task;
  int pretrain_steps = 0;
};

struct EvaluationConfig {
  std::vector<std::string> suites{"retrieval", "geometry"};
  double far = 1e-3;
  double variance_fraction = 0.99;
  int probe_window = 3;
  int probe_folds = 10;
  double probe_ridge = 0.0;
  int max_projection_k = 200;
  double reconstruction_tolerance = 0.02;
  // Score-table columns ("<task>/<metric>"); empty selects per-regime defaults.
  std::vector<std::string> columns;
  std::map<std::string, double> human_references;

  bool has_suite(std::string_view name) const;
};

/// Everything an experiment needs. The corpus seed is derived from `seed`
/// via the "datagen" stream, so one master seed fixes every module.
struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "imic-out";
  CorpusSpec corpus;
  EncoderConfig encoder;
  AdamConfig optimizer;
  SchedulerConfig curriculum;
  std::map<std::string, double> goals;  // by task name
  TrainingConfig training;
  EvaluationConfig evaluation;

  /// Recomputes derived fields (corpus seed, ordered goals) after edits.
  void finalize();
  /// Throws ValidationError naming the offending field.
  void validate() const;
};

/// Parses the JSON config. Unknown keys, wrong types and a mismatched
/// schema_version are ValidationErrors.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Serializes back to the same schema (used to record the resolved config).
std::string dump_config(const ExperimentConfig& config);

}  // namespace imic
