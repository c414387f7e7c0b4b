#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "imic/datagen.hpp"
#include "imic/encoder.hpp"
#include "imic/optim.hpp"
#include "imic/rng.hpp"

namespace imic {

enum class CurriculumMode {
  kBalanced,    // IMIC-B: t batches of every task per optimizer step
  kAdaptive,    // IMIC-A: T batches per step, sampled from task scores
  kSequential,  // blocked baseline: all T batches from one task at a time
};

std::string_view to_string(CurriculumMode mode);
/// Accepts "B"/"imic-b", "A"/"imic-a", "sequential".
CurriculumMode parse_mode(std::string_view text);

// ---------------------------------------------------------------------------
// Scheduling formulas

/// Constant allocation (t, ..., t) of length `task_count`; g = task_count * t.
std::vector<int> imicb_allocation(int task_count, int batches_per_task);

/// R = |curr - prev| / prev / t + eps. A zero `prev` substitutes eps for the
/// ratio. Throws ContractError for t < 1 or prev < 0.
double relative_improvement(double metric_prev, double metric_curr, int batches,
                            double epsilon);

/// D = max(0, (goal - accuracy) / goal). Throws ContractError unless goal
/// lies in (0, 1].
double distance_from_goal(double goal, double accuracy);

/// S = D / R.
double difficulty_score(double distance, double improvement);

/// Two-stage normalization. Stage one divides by the total (all-zero scores
/// give the uniform distribution). Stage two repeatedly pins tasks below
/// `floor` to exactly `floor` and shares the remaining mass among unpinned
/// tasks in proportion to their stage-one values, until no unpinned task
/// falls below the floor. Throws ConfigError when floor * N >= 1.
std::vector<double> task_scores_to_probabilities(std::span<const double> scores,
                                                 double floor);

/// Multinomial draw of `total` batch slots over tasks.
std::vector<int> sample_allocation(std::span<const double> probabilities, int total,
                                   Rng& rng);

// ---------------------------------------------------------------------------
// Trainer

struct SchedulerConfig {
  CurriculumMode mode = CurriculumMode::kBalanced;
  int batches_per_task = 1;  // t
  int total_batches = 4;     // T (adaptive and sequential)
  double epsilon = 1e-8;
  double floor = 0.05;
  std::vector<double> goals;  // one per task, in (0, 1]
  int cadence = 1;            // accuracy measured every `cadence` steps
  int steps_per_epoch = 100;  // adaptive and sequential epochs
  int block_steps = 0;        // sequential: steps spent on each task
  int identities_per_batch = 10;  // P
  int positives_per_id = 4;       // K
  double margin = 0.35;
  bool subsample = false;  // draw from each task's subsample_fraction

  void validate(std::size_t task_count) const;
};

struct AccuracyRecord {
  long step = 0;
  double accuracy = 0.0;
};

struct TaskState {
  std::vector<AccuracyRecord> metric_log;
  int last_allocation = 0;
  double improvement = 0.0;  // R
  double distance = 0.0;     // D
  double score = 0.0;        // S
  double probability = 0.0;  // p used for the most recent allocation

  /// Most recent logged accuracy. Throws ConfigError on an empty log.
  double latest_accuracy() const;
};

struct TaskStepRecord {
  int allocation = 0;
  double loss = 0.0;  // summed over the task's batches
  bool exhausted = false;
  std::optional<double> accuracy;  // online accuracy measured this step
  double improvement = 0.0;
  double distance = 0.0;
  double score = 0.0;
  double probability = 0.0;
};

struct StepReport {
  long step = 0;
  CurriculumMode mode = CurriculumMode::kBalanced;
  std::vector<TaskStepRecord> tasks;
  int batches = 0;
  std::uint64_t param_hash = 0;
};

struct EpochReport {
  std::vector<StepReport> steps;
};

/// Shared-encoder multi-task trainer. Owns one loader per task, one gradient
/// buffer and the optimizer state. Batches are accumulated in task-index
/// order, so runs are bit-reproducible for a given seed.
class Trainer {
 public:
  Trainer(std::vector<const TaskData*> tasks, EncoderParams params, AdamConfig adam,
          SchedulerConfig config, std::uint64_t seed);

  /// Logs one online-accuracy measurement per task from a dedicated
  /// evaluation batch, without touching the training loaders. Required
  /// before adaptive steps.
  void seed_initial_accuracies();

  /// One optimizer step under the configured mode.
  StepReport step();
  /// One optimizer step with a caller-chosen allocation (sum >= 1).
  StepReport step_with_allocation(std::span<const int> allocation);

  /// Balanced: steps until every loader has reported exhaustion since the
  /// epoch began. Adaptive and sequential: `steps_per_epoch` steps.
  EpochReport run_epoch();

  /// Writes one JSON record per step to `out` (nullptr disables).
  void set_trace(std::ostream* out) { trace_ = out; }
  /// Keeps the batches, pre-step params and summed gradient of the last step.
  void set_capture(bool on) { capture_ = on; }

  const EncoderParams& params() const { return params_; }
  const OptimState& optimizer() const { return optim_; }
  const std::vector<TaskState>& states() const { return states_; }
  const Loader& loader(std::size_t task) const { return loaders_.at(task); }
  const SchedulerConfig& config() const { return config_; }
  std::size_t task_count() const { return tasks_.size(); }
  const std::string& task_name(std::size_t i) const { return tasks_.at(i)->name; }
  long steps_taken() const { return step_; }

  const std::vector<Batch>& captured_batches() const { return captured_batches_; }
  const EncoderParams& captured_params() const { return captured_params_; }
  const GradBuffer& captured_gradient() const { return captured_gradient_; }

 private:
  std::vector<int> allocate();
  void refresh_scores(std::size_t task);
  void write_trace(const StepReport& report) const;

  std::vector<const TaskData*> tasks_;
  EncoderParams params_;
  OptimState optim_;
  GradBuffer buffer_;
  SchedulerConfig config_;
  std::vector<Loader> loaders_;
  std::vector<Loader> eval_loaders_;
  std::vector<TaskState> states_;
  Rng allocation_rng_;
  long step_ = 0;
  std::ostream* trace_ = nullptr;
  bool capture_ = false;
  std::vector<Batch> captured_batches_;
  EncoderParams captured_params_;
  GradBuffer captured_gradient_;
};

/// One structured-text trace record (a single JSON object, no newline).
std::string trace_record(const StepReport& report, std::span<const std::string> names);

}  // namespace imic
