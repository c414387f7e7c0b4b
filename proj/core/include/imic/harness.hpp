#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "imic/config.hpp"
#include "imic/curriculum.hpp"
#include "imic/datagen.hpp"
#include "imic/encoder.hpp"
#include "imic/geometry.hpp"
#include "imic/metrics.hpp"

namespace imic {

/// Per-task metrics on the test split, keyed "<task>/<metric>" with metric
/// in {top1, top5, rank1, rank5, verif_acc, tar@far, auc}. top-k is
/// nearest-class-centroid (train split centroids); rank-k uses the train split
/// as gallery; pair metrics use all test pairs.
std::map<std::string, double> evaluate_model(const EncoderParams& params, const Corpus& corpus,
                                             const EvaluationConfig& eval, std::uint64_t seed);

/// Per-regime defaults: coarse top1/top5, fine-identity verif_acc/tar@far,
/// degraded rank1/rank5, intermediate rank1/tar@far.
std::vector<std::string> default_columns(const Corpus& corpus);

ScoreTable make_score_table(const std::vector<std::string>& models,
                            const std::vector<std::map<std::string, double>>& metrics,
                            const std::vector<std::string>& columns);

EncoderParams initial_encoder(const ExperimentConfig& config);

/// Trains `params` on the listed tasks of `corpus` under `mode`, for `steps`
/// optimizer steps, or for `epochs` epochs when `steps` is negative.
struct TrainOutcome {
  EncoderParams params;
  std::vector<StepReport> steps;
};
TrainOutcome train_curriculum(const ExperimentConfig& config, const Corpus& corpus,
                              EncoderParams params, const std::vector<int>& task_ids,
                              CurriculumMode mode, long steps, int epochs,
                              std::ostream* trace);

/// Single-task pretraining, g = N*t batches of `pretrain_task` per step.
TrainOutcome pretrain(const ExperimentConfig& config, const Corpus& corpus,
                      EncoderParams params, std::ostream* trace);

struct ReconstructionCurve {
  std::string source;
  std::string target;
  std::vector<Eigen::Index> k;
  std::vector<double> auc;
  std::vector<double> delta;
  double full_auc = 0.0;
  double full_basis_delta = 0.0;     // delta with the complete source basis
  Eigen::Index first_within = -1;    // first k with delta > -tolerance
};

struct GeometryReport {
  ProbeResult probe;
  ProbeCurve sliding;
  std::vector<std::string> tasks;
  std::vector<Eigen::Index> subspace_dims;
  // angles[i][j] for i < j
  std::map<std::pair<int, int>, std::vector<double>> angles;
  std::vector<ReconstructionCurve> reconstruction;
};

/// Linear task probe, sliding-window PC probe, 99%-variance principal angles
/// and cross-task reconstruction curves on test-split embeddings. When `out`
/// is non-empty, writes the delimited-text curves there.
GeometryReport analyze_embeddings(const EncoderParams& params, const Corpus& corpus,
                                  const EvaluationConfig& eval, std::uint64_t seed,
                                  const std::filesystem::path& out = {});

struct RunResult {
  std::vector<std::string> files;  // relative to the output directory
  std::map<std::string, double> metrics;
  std::uint64_t param_hash = 0;
  long steps = 0;
};

/// Full pipeline: corpus, optional pretraining, curriculum training,
/// evaluation, analysis, artifacts and summary.json.
RunResult run(const ExperimentConfig& config);

struct ForgettingReport {
  ScoreTable table;  // rows: sequential, imic-b, imic-a
  std::vector<double> pretrain_drop;
  std::vector<double> expert_index;
  std::vector<std::string> index_columns;  // columns with a positive maximum
  double pretrain_accuracy = 0.0;
  long finetune_steps = 0;
  std::string accuracy_column;
};

/// Pretrains on training.pretrain_task, then fine-tunes three copies for the
/// same number of steps and batches: sequential over the other tasks only,
/// IMIC-B and IMIC-A over all tasks. Writes artifacts when `write` is set.
ForgettingReport run_forgetting_comparison(const ExperimentConfig& config, bool write = true);

struct RankedModel {
  std::string model;
  double index = 0.0;
};

/// Multi-task index per row, sorted descending (stable on ties).
std::vector<RankedModel> score_paper_table(const ScoreTable& table, IndexMode mode);

}  // namespace imic
