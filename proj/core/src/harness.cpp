#include "imic/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "imic/error.hpp"
#include "imic/rng.hpp"

namespace imic {
namespace {

namespace fs = std::filesystem;

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::vector<int> all_tasks(const Corpus& corpus) {
  std::vector<int> ids(corpus.tasks.size());
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

// Genuine pairs plus an equal-sized uniform sample of impostor pairs, in a
// seeded random order so every fold sees both classes.
double pair_verification(const PairScores& pairs, Rng& rng) {
  std::vector<double> impostor = pairs.impostor;
  std::shuffle(impostor.begin(), impostor.end(), rng);
  impostor.resize(std::min(impostor.size(), pairs.genuine.size()));
  std::vector<std::pair<double, bool>> all;
  for (double s : pairs.genuine) all.emplace_back(s, true);
  for (double s : impostor) all.emplace_back(s, false);
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<double> scores;
  std::vector<char> same_storage;
  for (const auto& [s, y] : all) {
    scores.push_back(s);
    same_storage.push_back(y ? 1 : 0);
  }
  const std::unique_ptr<bool[]> same(new bool[same_storage.size()]);
  for (std::size_t i = 0; i < same_storage.size(); ++i) same[i] = same_storage[i] != 0;
  return verification_accuracy(scores, std::span<const bool>(same.get(), same_storage.size()));
}

double pair_auc(const Eigen::MatrixXd& features, std::span<const int> labels) {
  const auto pairs = all_pair_scores(normalize_rows(features), labels);
  return roc_auc(pairs.genuine, pairs.impostor);
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) c = '_';
  return s;
}

ExperimentConfig with_mode(const ExperimentConfig& config, CurriculumMode mode) {
  ExperimentConfig c = config;
  c.curriculum.mode = mode;
  return c;
}

std::vector<double> goals_for(const ExperimentConfig& config, const std::vector<int>& ids) {
  if (config.curriculum.goals.empty()) return {};
  std::vector<double> out;
  for (int id : ids) out.push_back(config.curriculum.goals[static_cast<std::size_t>(id)]);
  return out;
}

void write_metrics_table(const fs::path& path, const ScoreTable& table,
                         const std::vector<std::pair<std::string, std::vector<double>>>& extra = {}) {
  auto out = open_out(path);
  write_score_table(out, table, extra);
}

}  // namespace

std::map<std::string, double> evaluate_model(const EncoderParams& params, const Corpus& corpus,
                                             const EvaluationConfig& eval, std::uint64_t seed) {
  std::map<std::string, double> out;
  for (const auto& task : corpus.tasks) {
    if (task.test.rows() < 2)
      throw ConfigError("task " + task.name + " needs test samples for evaluation");
    const Eigen::MatrixXd train = embed(params, task.train);
    const Eigen::MatrixXd test = embed(params, task.test);
    const std::string p = task.name + "/";
    out[p + "top1"] = nearest_centroid_topk(train, task.train_labels, test, task.test_labels, 1);
    out[p + "top5"] = nearest_centroid_topk(train, task.train_labels, test, task.test_labels, 5);
    out[p + "rank1"] = rank_k(test, task.test_labels, train, task.train_labels, 1);
    out[p + "rank5"] = rank_k(test, task.test_labels, train, task.train_labels, 5);
    const auto pairs = all_pair_scores(test, task.test_labels);
    if (pairs.genuine.empty() || pairs.impostor.empty())
      throw ConfigError("task " + task.name + " needs >= 2 test samples per class");
    out[p + "auc"] = roc_auc(pairs.genuine, pairs.impostor);
    out[p + "tar@far"] = tar_at_far(pairs.genuine, pairs.impostor, eval.far);
    Rng rng = make_stream(seed, "eval/verification/" + task.name);
    out[p + "verif_acc"] = pair_verification(pairs, rng);
  }
  return out;
}

std::vector<std::string> default_columns(const Corpus& corpus) {
  std::vector<std::string> cols;
  for (const auto& t : corpus.tasks) {
    const std::string p = t.name + "/";
    switch (t.regime) {
      case Regime::kCoarseCategory:
        cols.insert(cols.end(), {p + "top1", p + "top5"});
        break;
      case Regime::kFineIdentity:
        cols.insert(cols.end(), {p + "verif_acc", p + "tar@far"});
        break;
      case Regime::kFineIdentityDegraded:
        cols.insert(cols.end(), {p + "rank1", p + "rank5"});
        break;
      case Regime::kIntermediate:
        cols.insert(cols.end(), {p + "rank1", p + "tar@far"});
        break;
    }
  }
  return cols;
}

ScoreTable make_score_table(const std::vector<std::string>& models,
                            const std::vector<std::map<std::string, double>>& metrics,
                            const std::vector<std::string>& columns) {
  if (models.size() != metrics.size()) throw ContractError("one metric map per model");
  ScoreTable table;
  table.rows = models;
  table.columns = columns;
  table.values.resize(static_cast<Eigen::Index>(models.size()),
                      static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < models.size(); ++i)
    for (std::size_t j = 0; j < columns.size(); ++j) {
      auto it = metrics[i].find(columns[j]);
      if (it == metrics[i].end()) throw ConfigError("unknown metric column '" + columns[j] + "'");
      table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = it->second;
    }
  return table;
}

EncoderParams initial_encoder(const ExperimentConfig& config) {
  Rng rng = make_stream(config.seed, "encoder/init");
  return init_encoder(config.corpus.ambient_dim, config.encoder.hidden, config.encoder.output_dim,
                      config.encoder.activation, rng, config.encoder.init_gain);
}

TrainOutcome train_curriculum(const ExperimentConfig& config, const Corpus& corpus,
                              EncoderParams params, const std::vector<int>& task_ids,
                              CurriculumMode mode, long steps, int epochs,
                              std::ostream* trace) {
  std::vector<const TaskData*> tasks;
  for (int id : task_ids) tasks.push_back(&corpus.tasks.at(static_cast<std::size_t>(id)));
  SchedulerConfig sched = config.curriculum;
  sched.mode = mode;
  sched.goals = goals_for(config, task_ids);
  if (mode == CurriculumMode::kAdaptive && sched.goals.empty())
    throw ValidationError("curriculum.goals", "adaptive training needs goal accuracies");

  std::string stream = "train/" + std::string(to_string(mode));
  for (int id : task_ids) stream += "/" + corpus.tasks[static_cast<std::size_t>(id)].name;
  Trainer trainer(std::move(tasks), std::move(params), config.optimizer, sched,
                  stream_seed(config.seed, stream));
  trainer.set_trace(trace);
  if (mode == CurriculumMode::kAdaptive) trainer.seed_initial_accuracies();

  TrainOutcome outcome;
  if (steps >= 0) {
    for (long s = 0; s < steps; ++s) outcome.steps.push_back(trainer.step());
  } else {
    for (int e = 0; e < epochs; ++e) {
      auto epoch = trainer.run_epoch();
      outcome.steps.insert(outcome.steps.end(), epoch.steps.begin(), epoch.steps.end());
    }
  }
  outcome.params = trainer.params();
  return outcome;
}

TrainOutcome pretrain(const ExperimentConfig& config, const Corpus& corpus, EncoderParams params,
                      std::ostream* trace) {
  if (config.training.pretrain_task.empty() || config.training.pretrain_steps == 0)
    return {std::move(params), {}};
  ExperimentConfig c = config;
  c.curriculum.batches_per_task =
      config.curriculum.batches_per_task * static_cast<int>(corpus.tasks.size());
  const int id = corpus.index_of(config.training.pretrain_task);
  return train_curriculum(c, corpus, std::move(params), {id}, CurriculumMode::kBalanced,
                          config.training.pretrain_steps, 0, trace);
}

GeometryReport analyze_embeddings(const EncoderParams& params, const Corpus& corpus,
                                  const EvaluationConfig& eval, std::uint64_t seed,
                                  const fs::path& out) {
  GeometryReport report;
  std::vector<Eigen::MatrixXd> per_task;
  Eigen::Index rows = 0;
  for (const auto& t : corpus.tasks) {
    per_task.push_back(embed(params, t.test));
    rows += per_task.back().rows();
    report.tasks.push_back(t.name);
  }
  const Eigen::Index dim = params.output_dim();
  Eigen::MatrixXd pooled(rows, dim);
  std::vector<int> labels;
  std::vector<std::string> tags;
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < per_task.size(); ++i) {
    pooled.middleRows(at, per_task[i].rows()) = per_task[i];
    at += per_task[i].rows();
    labels.insert(labels.end(), static_cast<std::size_t>(per_task[i].rows()), static_cast<int>(i));
    tags.insert(tags.end(), static_cast<std::size_t>(per_task[i].rows()), report.tasks[i]);
  }

  ProbeOptions opts;
  opts.folds = eval.probe_folds;
  opts.ridge = eval.probe_ridge;
  opts.seed = stream_seed(seed, "geometry/probe");
  report.probe = linear_task_probe(pooled, labels, opts);
  if (eval.probe_window <= pca(pooled).dim())
    report.sliding = sliding_window_probe(pooled, labels, eval.probe_window, opts);

  std::vector<Subspace> subspaces;
  for (std::size_t i = 0; i < per_task.size(); ++i) {
    subspaces.push_back(task_subspace(per_task[i], eval.variance_fraction, report.tasks[i]));
    report.subspace_dims.push_back(subspaces.back().dim());
  }
  for (std::size_t i = 0; i < subspaces.size(); ++i)
    for (std::size_t j = i + 1; j < subspaces.size(); ++j)
      report.angles[{static_cast<int>(i), static_cast<int>(j)}] =
          principal_angles(subspaces[i], subspaces[j]);

  for (std::size_t s = 0; s < per_task.size(); ++s) {
    const Subspace source = uncentered_basis(per_task[s], report.tasks[s]);
    for (std::size_t t = 0; t < per_task.size(); ++t) {
      const auto& target_labels = corpus.tasks[t].test_labels;
      const EmbeddingMetric metric = [&](const Eigen::MatrixXd& f) {
        return pair_auc(f, target_labels);
      };
      ReconstructionCurve curve;
      curve.source = report.tasks[s];
      curve.target = report.tasks[t];
      curve.full_auc = metric(per_task[t]);
      const Eigen::Index kmax = std::min<Eigen::Index>(eval.max_projection_k, source.dim());
      for (Eigen::Index k = 1; k <= kmax; ++k) {
        const auto r = cross_task_projection_eval(source, k, per_task[t], metric, curve.full_auc);
        curve.k.push_back(k);
        curve.auc.push_back(r.value);
        curve.delta.push_back(r.delta);
        if (curve.first_within < 0 && r.delta > -eval.reconstruction_tolerance)
          curve.first_within = k;
      }
      curve.full_basis_delta =
          cross_task_projection_eval(source, source.dim(), per_task[t], metric, curve.full_auc)
              .delta;
      report.reconstruction.push_back(std::move(curve));
    }
  }

  if (!out.empty()) {
    {
      auto f = open_out(out / "probe.csv");
      f << "fold,accuracy\n";
      for (std::size_t i = 0; i < report.probe.fold_accuracies.size(); ++i)
        f << i + 1 << ',' << format_number(report.probe.fold_accuracies[i]) << '\n';
      f << "mean," << format_number(report.probe.mean) << '\n';
      f << "std," << format_number(report.probe.stddev) << '\n';
    }
    {
      auto f = open_out(out / "sliding_window.csv");
      write_probe_curve(f, report.sliding);
    }
    {
      auto f = open_out(out / "subspaces.csv");
      f << "task,dim\n";
      for (std::size_t i = 0; i < report.tasks.size(); ++i)
        f << report.tasks[i] << ',' << report.subspace_dims[i] << '\n';
    }
    for (const auto& [key, angles] : report.angles) {
      auto f = open_out(out / ("angles_" + sanitize(report.tasks[static_cast<std::size_t>(key.first)]) +
                               "__" + sanitize(report.tasks[static_cast<std::size_t>(key.second)]) +
                               ".csv"));
      write_angles(f, angles);
    }
    {
      auto f = open_out(out / "reconstruction.csv");
      f << "source,target,k,auc,delta\n";
      for (const auto& c : report.reconstruction)
        for (std::size_t i = 0; i < c.k.size(); ++i)
          f << c.source << ',' << c.target << ',' << c.k[i] << ',' << format_number(c.auc[i])
            << ',' << format_number(c.delta[i]) << '\n';
    }
    {
      auto f = open_out(out / "reconstruction_summary.csv");
      f << "source,target,full_auc,full_basis_delta,first_k_within_tolerance\n";
      for (const auto& c : report.reconstruction)
        f << c.source << ',' << c.target << ',' << format_number(c.full_auc) << ','
          << format_number(c.full_basis_delta) << ',' << c.first_within << '\n';
    }
    {
      auto f = open_out(out / "projection_2d.csv");
      write_projection_2d(f, pooled, tags);
    }
  }
  return report;
}

RunResult run(const ExperimentConfig& config) {
  config.validate();
  const fs::path out = config.output_dir;
  fs::create_directories(out);
  RunResult result;
  auto record = [&](const std::string& rel) { result.files.push_back(rel); };

  {
    auto f = open_out(out / "config.resolved.json");
    f << dump_config(config) << '\n';
    record("config.resolved.json");
  }
  const Corpus corpus = build_corpus(config.corpus);
  export_corpus(corpus, out / "corpus");
  record("corpus/manifest.json");
  for (const auto& t : corpus.tasks) {
    record("corpus/" + t.name + ".train.f64");
    record("corpus/" + t.name + ".test.f64");
  }

  auto trace = open_out(out / "trace.jsonl");
  record("trace.jsonl");
  EncoderParams params = initial_encoder(config);
  params = pretrain(config, corpus, std::move(params), &trace).params;
  auto outcome = train_curriculum(config, corpus, std::move(params), all_tasks(corpus),
                                  config.curriculum.mode, -1, config.training.epochs, &trace);
  trace.close();
  result.steps = static_cast<long>(outcome.steps.size());
  result.param_hash = param_hash(outcome.params);
  save_checkpoint(outcome.params, out / "checkpoint.bin");
  record("checkpoint.bin");

  if (config.evaluation.has_suite("retrieval")) {
    result.metrics = evaluate_model(outcome.params, corpus, config.evaluation, config.seed);
    const auto columns =
        config.evaluation.columns.empty() ? default_columns(corpus) : config.evaluation.columns;
    const std::string row = "imic-" + std::string(to_string(config.curriculum.mode));
    write_metrics_table(out / "metrics.csv", make_score_table({row}, {result.metrics}, columns));
    record("metrics.csv");
  }
  nlohmann::ordered_json geometry;
  if (config.evaluation.has_suite("geometry")) {
    const auto report =
        analyze_embeddings(outcome.params, corpus, config.evaluation, config.seed, out / "geometry");
    for (const auto& entry : fs::directory_iterator(out / "geometry"))
      if (entry.is_regular_file()) record("geometry/" + entry.path().filename().string());
    geometry["probe_mean"] = report.probe.mean;
    geometry["probe_std"] = report.probe.stddev;
    for (const auto& c : report.reconstruction)
      geometry["first_k_within_tolerance"][c.source + "->" + c.target] = c.first_within;
  }
  std::sort(result.files.begin(), result.files.end());

  nlohmann::ordered_json summary;
  summary["schema_version"] = kConfigSchemaVersion;
  summary["seed"] = config.seed;
  summary["mode"] = std::string(to_string(config.curriculum.mode));
  summary["steps"] = result.steps;
  summary["param_hash"] = result.param_hash;
  summary["metrics"] = result.metrics;
  if (!geometry.empty()) summary["geometry"] = geometry;
  auto files = result.files;
  files.push_back("summary.json");
  std::sort(files.begin(), files.end());
  summary["files"] = files;
  auto f = open_out(out / "summary.json");
  f << summary.dump(2) << '\n';
  result.files = files;
  return result;
}

ForgettingReport run_forgetting_comparison(const ExperimentConfig& config, bool write) {
  config.validate();
  if (config.training.pretrain_task.empty())
    throw ValidationError("training.pretrain_task", "forgetting comparison needs a pretrain task");
  if (config.curriculum.goals.empty())
    throw ValidationError("curriculum.goals", "IMIC-A needs goal accuracies");
  const fs::path out = config.output_dir;
  const Corpus corpus = build_corpus(config.corpus);
  const int pre_id = corpus.index_of(config.training.pretrain_task);
  const int n = static_cast<int>(corpus.tasks.size());
  const int g = n * config.curriculum.batches_per_task;

  std::ofstream pre_trace, b_trace, a_trace, s_trace;
  if (write) {
    fs::create_directories(out);
    pre_trace = open_out(out / "pretrain" / "trace.jsonl");
    b_trace = open_out(out / "imic-b" / "trace.jsonl");
    a_trace = open_out(out / "imic-a" / "trace.jsonl");
    s_trace = open_out(out / "sequential" / "trace.jsonl");
  }
  auto sink = [&](std::ofstream& s) -> std::ostream* { return write ? &s : nullptr; };

  const EncoderParams pretrained =
      pretrain(config, corpus, initial_encoder(config), sink(pre_trace)).params;

  ExperimentConfig bcfg = with_mode(config, CurriculumMode::kBalanced);
  auto imic_b = train_curriculum(bcfg, corpus, pretrained, all_tasks(corpus),
                                 CurriculumMode::kBalanced, -1, config.training.epochs,
                                 sink(b_trace));
  const long steps = static_cast<long>(imic_b.steps.size());

  ExperimentConfig acfg = with_mode(config, CurriculumMode::kAdaptive);
  acfg.curriculum.total_batches = g;
  TrainOutcome imic_a{pretrained, {}};
  if (steps > 0)
    imic_a = train_curriculum(acfg, corpus, pretrained, all_tasks(corpus),
                              CurriculumMode::kAdaptive, steps, 0, sink(a_trace));

  std::vector<int> identity_tasks;
  for (int i = 0; i < n; ++i)
    if (i != pre_id) identity_tasks.push_back(i);
  ExperimentConfig scfg = with_mode(config, CurriculumMode::kSequential);
  scfg.curriculum.total_batches = g;
  scfg.curriculum.block_steps = static_cast<int>(
      std::max<long>(1, (steps + static_cast<long>(identity_tasks.size()) - 1) /
                            static_cast<long>(identity_tasks.size())));
  TrainOutcome sequential{pretrained, {}};
  if (steps > 0)
    sequential = train_curriculum(scfg, corpus, pretrained, identity_tasks,
                                  CurriculumMode::kSequential, steps, 0, sink(s_trace));

  ForgettingReport report;
  report.finetune_steps = steps;
  report.accuracy_column = config.training.pretrain_task + "/top1";
  const auto pre_metrics = evaluate_model(pretrained, corpus, config.evaluation, config.seed);
  report.pretrain_accuracy = pre_metrics.at(report.accuracy_column);

  const std::vector<std::string> models{"sequential", "imic-b", "imic-a"};
  std::vector<std::map<std::string, double>> metrics{
      evaluate_model(sequential.params, corpus, config.evaluation, config.seed),
      evaluate_model(imic_b.params, corpus, config.evaluation, config.seed),
      evaluate_model(imic_a.params, corpus, config.evaluation, config.seed)};
  const auto columns =
      config.evaluation.columns.empty() ? default_columns(corpus) : config.evaluation.columns;
  report.table = make_score_table(models, metrics, columns);
  // A column every model scores 0 on has no relative difference; leave it out.
  const Eigen::VectorXd max = report.table.column_max();
  for (std::size_t j = 0; j < columns.size(); ++j)
    if (max(static_cast<Eigen::Index>(j)) > 0.0) report.index_columns.push_back(columns[j]);
  const ScoreTable index_table =
      report.index_columns.empty() ? ScoreTable{}
                                   : make_score_table(models, metrics, report.index_columns);
  for (std::size_t i = 0; i < models.size(); ++i) {
    report.pretrain_drop.push_back(report.pretrain_accuracy - metrics[i].at(report.accuracy_column));
    report.expert_index.push_back(report.index_columns.empty()
                                      ? std::numeric_limits<double>::quiet_NaN()
                                      : multitask_index(index_table, i, IndexMode::kExpert));
  }

  if (write) {
    write_metrics_table(out / "forgetting.csv", report.table,
                        {{"pretrain_drop", report.pretrain_drop},
                         {"multitask_expert", report.expert_index}});
    nlohmann::ordered_json summary;
    summary["seed"] = config.seed;
    summary["finetune_steps"] = steps;
    summary["batches_per_step"] = g;
    summary["accuracy_column"] = report.accuracy_column;
    summary["pretrain_accuracy"] = report.pretrain_accuracy;
    summary["index_columns"] = report.index_columns;
    for (std::size_t i = 0; i < models.size(); ++i) {
      summary["models"][models[i]]["pretrain_drop"] = report.pretrain_drop[i];
      summary["models"][models[i]]["multitask_expert"] = report.expert_index[i];
    }
    summary["files"] = {"forgetting.csv", "forgetting_summary.json", "imic-a/trace.jsonl",
                        "imic-b/trace.jsonl", "pretrain/trace.jsonl", "sequential/trace.jsonl"};
    auto f = open_out(out / "forgetting_summary.json");
    f << summary.dump(2) << '\n';
  }
  return report;
}

std::vector<RankedModel> score_paper_table(const ScoreTable& table, IndexMode mode) {
  std::vector<RankedModel> ranked;
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    ranked.push_back({table.rows[i], multitask_index(table, i, mode)});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedModel& a, const RankedModel& b) { return a.index > b.index; });
  return ranked;
}

}  // namespace imic
