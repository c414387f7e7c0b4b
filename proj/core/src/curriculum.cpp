#include "imic/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "imic/error.hpp"
#include "imic/triplet.hpp"

namespace imic {

std::string_view to_string(CurriculumMode mode) {
  switch (mode) {
    case CurriculumMode::kBalanced: return "B";
    case CurriculumMode::kAdaptive: return "A";
    case CurriculumMode::kSequential: return "sequential";
  }
  return "unknown";
}

CurriculumMode parse_mode(std::string_view text) {
  if (text == "B" || text == "imic-b") return CurriculumMode::kBalanced;
  if (text == "A" || text == "imic-a") return CurriculumMode::kAdaptive;
  if (text == "sequential") return CurriculumMode::kSequential;
  throw ValidationError("curriculum.mode", "unknown curriculum mode '" + std::string(text) + "'");
}

std::vector<int> imicb_allocation(int task_count, int batches_per_task) {
  if (task_count < 1) throw ContractError("task_count must be >= 1");
  if (batches_per_task < 1) throw ContractError("batches per task must be >= 1");
  return std::vector<int>(static_cast<std::size_t>(task_count), batches_per_task);
}

double relative_improvement(double metric_prev, double metric_curr, int batches,
                            double epsilon) {
  if (batches < 1) throw ContractError("relative_improvement needs t >= 1");
  if (metric_prev < 0.0) throw ContractError("metric_prev must be nonnegative");
  const double ratio =
      metric_prev == 0.0 ? epsilon : std::abs(metric_curr - metric_prev) / metric_prev;
  return ratio * (1.0 / static_cast<double>(batches)) + epsilon;
}

double distance_from_goal(double goal, double accuracy) {
  if (!(goal > 0.0 && goal <= 1.0)) throw ContractError("goal accuracy must lie in (0, 1]");
  return std::max(0.0, (goal - accuracy) / goal);
}

double difficulty_score(double distance, double improvement) {
  if (!(improvement > 0.0)) throw ContractError("improvement must be positive");
  return distance / improvement;
}

std::vector<double> task_scores_to_probabilities(std::span<const double> scores,
                                                 double floor) {
  const std::size_t n = scores.size();
  if (n == 0) throw ContractError("no task scores");
  if (floor < 0.0 || floor * static_cast<double>(n) >= 1.0)
    throw ConfigError("probability floor * task count must be < 1");
  double total = 0.0;
  for (double s : scores) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ContractError("scores must be finite and >= 0");
    total += s;
  }
  std::vector<double> base(n);
  for (std::size_t i = 0; i < n; ++i)
    base[i] = total > 0.0 ? scores[i] / total : 1.0 / static_cast<double>(n);

  std::vector<bool> pinned(n, false);
  std::size_t pinned_count = 0;
  std::vector<double> p(n);
  for (;;) {
    const double mass = 1.0 - floor * static_cast<double>(pinned_count);
    double free_total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (!pinned[i]) free_total += base[i];
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (pinned[i]) {
        p[i] = floor;
        continue;
      }
      p[i] = free_total > 0.0 ? mass * (base[i] / free_total) : 0.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!pinned[i] && p[i] < floor) {
        pinned[i] = true;
        ++pinned_count;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return p;
}

std::vector<int> sample_allocation(std::span<const double> probabilities, int total,
                                   Rng& rng) {
  if (total < 1) throw ContractError("total batches must be >= 1");
  std::discrete_distribution<int> pick(probabilities.begin(), probabilities.end());
  std::vector<int> counts(probabilities.size(), 0);
  for (int slot = 0; slot < total; ++slot) ++counts[static_cast<std::size_t>(pick(rng))];
  return counts;
}

void SchedulerConfig::validate(std::size_t task_count) const {
  if (task_count < 1) throw ValidationError("tasks", "trainer needs at least one task");
  if (batches_per_task < 1)
    throw ValidationError("curriculum.batches_per_task", "must be >= 1");
  if (total_batches < 1) throw ValidationError("curriculum.total_batches", "must be >= 1");
  if (!(epsilon > 0.0)) throw ValidationError("curriculum.epsilon", "must be > 0");
  if (floor < 0.0 || floor * static_cast<double>(task_count) >= 1.0)
    throw ValidationError("curriculum.floor", "floor * task count must be < 1");
  if (cadence < 1) throw ValidationError("curriculum.cadence", "must be >= 1");
  if (steps_per_epoch < 0) throw ValidationError("curriculum.steps_per_epoch", "must be >= 0");
  if (identities_per_batch < 2)
    throw ValidationError("curriculum.identities_per_batch", "must be >= 2");
  if (positives_per_id < 2)
    throw ValidationError("curriculum.positives_per_id", "must be >= 2");
  if (!goals.empty() && goals.size() != task_count)
    throw ValidationError("curriculum.goals", "one goal per task required");
  for (double g : goals)
    if (!(g > 0.0 && g <= 1.0)) throw ValidationError("curriculum.goals", "goals lie in (0, 1]");
  if (mode == CurriculumMode::kAdaptive && goals.empty())
    throw ValidationError("curriculum.goals", "adaptive mode needs goal accuracies");
}

double TaskState::latest_accuracy() const {
  if (metric_log.empty())
    throw ConfigError("no accuracy logged; seed initial accuracies before adaptive steps");
  return metric_log.back().accuracy;
}

Trainer::Trainer(std::vector<const TaskData*> tasks, EncoderParams params, AdamConfig adam,
                 SchedulerConfig config, std::uint64_t seed)
    : tasks_(std::move(tasks)),
      params_(std::move(params)),
      optim_(params_, adam),
      buffer_(params_),
      config_(std::move(config)),
      states_(tasks_.size()),
      allocation_rng_(make_stream(seed, "curriculum/allocation")) {
  config_.validate(tasks_.size());
  params_.validate();
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    const TaskData& data = *tasks_[i];
    const int id = static_cast<int>(i);
    if (config_.subsample && data.subsample_fraction < 1.0) {
      Rng pick = make_stream(seed, "curriculum/subsample/" + data.name);
      loaders_.emplace_back(data, id,
                            subsample_pool(data, data.subsample_fraction,
                                           config_.positives_per_id, pick),
                            make_stream(seed, "curriculum/loader/" + data.name));
    } else {
      loaders_.emplace_back(data, id, make_stream(seed, "curriculum/loader/" + data.name));
    }
    eval_loaders_.emplace_back(data, id, make_stream(seed, "curriculum/eval/" + data.name));
  }
}

void Trainer::seed_initial_accuracies() {
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    auto draw = eval_loaders_[i].next_batch(config_.identities_per_batch,
                                            config_.positives_per_id);
    const auto emb = embed(params_, draw.batch.features);
    const auto result = batch_hard_triplet(emb, draw.batch.labels, config_.margin);
    states_[i].metric_log.push_back({step_, result.satisfied_fraction});
    states_[i].improvement = config_.epsilon;
    refresh_scores(i);
  }
}

void Trainer::refresh_scores(std::size_t task) {
  auto& st = states_[task];
  if (config_.goals.empty() || st.metric_log.empty()) return;
  st.distance = distance_from_goal(config_.goals[task], st.latest_accuracy());
  st.score = difficulty_score(st.distance, st.improvement);
}

std::vector<int> Trainer::allocate() {
  const auto n = static_cast<int>(tasks_.size());
  switch (config_.mode) {
    case CurriculumMode::kBalanced:
      return imicb_allocation(n, config_.batches_per_task);
    case CurriculumMode::kAdaptive: {
      std::vector<double> scores;
      for (auto& st : states_) {
        st.latest_accuracy();  // throws when unseeded
        scores.push_back(st.score);
      }
      const auto p = task_scores_to_probabilities(scores, config_.floor);
      for (std::size_t i = 0; i < states_.size(); ++i) states_[i].probability = p[i];
      return sample_allocation(p, config_.total_batches, allocation_rng_);
    }
    case CurriculumMode::kSequential: {
      std::vector<int> alloc(tasks_.size(), 0);
      const long block = config_.block_steps > 0 ? config_.block_steps : 1;
      const auto current = static_cast<std::size_t>((step_ / block) % n);
      alloc[current] = config_.total_batches;
      return alloc;
    }
  }
  throw ContractError("unknown curriculum mode");
}

StepReport Trainer::step() {
  const auto allocation = allocate();
  StepReport report = step_with_allocation(allocation);
  return report;
}

StepReport Trainer::step_with_allocation(std::span<const int> allocation) {
  if (allocation.size() != tasks_.size())
    throw ContractError("allocation length must equal the task count");
  const int total = std::accumulate(allocation.begin(), allocation.end(), 0);
  if (total < 1 || std::any_of(allocation.begin(), allocation.end(), [](int t) { return t < 0; }))
    throw ContractError("allocation must be nonnegative with at least one batch");

  ++step_;
  StepReport report;
  report.step = step_;
  report.mode = config_.mode;
  report.batches = total;
  report.tasks.resize(tasks_.size());
  if (capture_) {
    captured_batches_.clear();
    captured_params_ = params_;
  }

  std::vector<double> satisfied(tasks_.size(), 0.0);
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    auto& rec = report.tasks[i];
    rec.allocation = allocation[i];
    for (int b = 0; b < allocation[i]; ++b) {
      auto draw = loaders_[i].next_batch(config_.identities_per_batch, config_.positives_per_id);
      rec.exhausted = rec.exhausted || draw.exhausted;
      const ForwardTrace trace = forward(params_, draw.batch.features);
      const TripletResult result =
          batch_hard_triplet(trace.embeddings, draw.batch.labels, config_.margin);
      backward(params_, trace, result.grad, buffer_);
      rec.loss += result.loss;
      satisfied[i] += result.satisfied_fraction;
      if (capture_) captured_batches_.push_back(std::move(draw.batch));
    }
  }
  if (capture_) captured_gradient_ = buffer_;
  adam_step(params_, buffer_, optim_);

  const bool measure = step_ % config_.cadence == 0;
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    auto& st = states_[i];
    auto& rec = report.tasks[i];
    st.last_allocation = allocation[i];
    if (config_.mode != CurriculumMode::kAdaptive)
      st.probability = static_cast<double>(allocation[i]) / total;
    if (measure && allocation[i] > 0) {
      const double acc = satisfied[i] / allocation[i];
      rec.accuracy = acc;
      if (!st.metric_log.empty())
        st.improvement = relative_improvement(st.latest_accuracy(), acc, allocation[i],
                                              config_.epsilon);
      else
        st.improvement = config_.epsilon;
      st.metric_log.push_back({step_, acc});
    }
    // Unmeasured tasks keep R and fall back to their most recent accuracy.
    refresh_scores(i);
    rec.improvement = st.improvement;
    rec.distance = st.distance;
    rec.score = st.score;
    rec.probability = st.probability;
  }
  report.param_hash = param_hash(params_);
  write_trace(report);
  return report;
}

EpochReport Trainer::run_epoch() {
  EpochReport epoch;
  if (config_.mode == CurriculumMode::kBalanced) {
    std::vector<bool> seen(tasks_.size(), false);
    while (!std::all_of(seen.begin(), seen.end(), [](bool s) { return s; })) {
      epoch.steps.push_back(step());
      for (std::size_t i = 0; i < tasks_.size(); ++i)
        seen[i] = seen[i] || epoch.steps.back().tasks[i].exhausted;
    }
    return epoch;
  }
  for (int s = 0; s < config_.steps_per_epoch; ++s) epoch.steps.push_back(step());
  return epoch;
}

std::string trace_record(const StepReport& report, std::span<const std::string> names) {
  nlohmann::ordered_json rec;
  rec["step"] = report.step;
  rec["mode"] = std::string(to_string(report.mode));
  rec["batches"] = report.batches;
  rec["param_hash"] = report.param_hash;
  auto tasks = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < report.tasks.size(); ++i) {
    const auto& t = report.tasks[i];
    nlohmann::ordered_json jt;
    jt["name"] = i < names.size() ? names[i] : std::to_string(i);
    jt["t"] = t.allocation;
    jt["A"] = t.accuracy ? nlohmann::ordered_json(*t.accuracy) : nlohmann::ordered_json();
    jt["R"] = t.improvement;
    jt["D"] = t.distance;
    jt["S"] = t.score;
    jt["p"] = t.probability;
    jt["loss"] = t.loss;
    jt["exhausted"] = t.exhausted;
    tasks.push_back(std::move(jt));
  }
  rec["tasks"] = std::move(tasks);
  return rec.dump();
}

void Trainer::write_trace(const StepReport& report) const {
  if (!trace_) return;
  std::vector<std::string> names;
  for (const auto* t : tasks_) names.push_back(t->name);
  *trace_ << trace_record(report, names) << '\n';
}

}  // namespace imic
