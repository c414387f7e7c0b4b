// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Geometry>
#include <json.hpp>

#include "imic/config.hpp"
#include "imic/curriculum.hpp"
#include "imic/encoder.hpp"
#include "imic/geometry.hpp"
#include "imic/harness.hpp"
#include "imic/metrics.hpp"
#include "imic/triplet.hpp"

#ifndef IMIC_SOURCE_DIR
#define IMIC_SOURCE_DIR "."
#endif

using namespace imic;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = IMIC_SOURCE_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream ss;
  ss.precision(digits);
  ss << v;
  return ss.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("imic_acceptance_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig default_config(const std::string& out) {
  auto c = load_config(kSource / "configs" / "default.json");
  c.output_dir = scratch(out);
  c.finalize();
  c.validate();
  return c;
}

// Shared between 7, 9 and 10 so the default IMIC-B run happens once.
struct DefaultRun {
  ExperimentConfig config;
  RunResult result;
  GeometryReport geometry;
};

const DefaultRun& default_run() {
  static const DefaultRun run_once = [] {
    DefaultRun d{default_config("run_a"), {}, {}};
    d.config.curriculum.mode = CurriculumMode::kBalanced;
    d.result = run(d.config);
    const auto params = load_checkpoint(d.config.output_dir / "checkpoint.bin");
    d.geometry = analyze_embeddings(params, build_corpus(d.config.corpus), d.config.evaluation,
                                    d.config.seed);
    return d;
  }();
  return run_once;
}

Outcome scheduler_conformance() {
  Rng rng(20240611);
  std::exponential_distribution<double> e(1.0);
  std::bernoulli_distribution zero(0.2);
  double worst_floor = 1.0, worst_mass = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> s(4);
    for (double& v : s) v = zero(rng) ? 0.0 : e(rng) * std::pow(10.0, 6.0 * e(rng) - 3.0);
    const auto p = task_scores_to_probabilities(s, 0.05);
    worst_floor = std::min(worst_floor, *std::min_element(p.begin(), p.end()));
    worst_mass = std::max(worst_mass, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0));
  }
  double hand_err = 0.0;
  for (const std::vector<double>& s :
       {std::vector<double>{0.97, 0.01, 0.01, 0.01}, std::vector<double>{1, 0, 0, 0}}) {
    const auto p = task_scores_to_probabilities(s, 0.05);
    const double want[] = {0.85, 0.05, 0.05, 0.05};
    for (int i = 0; i < 4; ++i)
      hand_err = std::max(hand_err, std::abs(p[static_cast<std::size_t>(i)] - want[i]));
  }
  const bool ok = worst_floor >= 0.05 - 1e-12 && worst_mass <= 1e-12 && hand_err <= 1e-15;
  return {ok, "min p " + fmt(worst_floor, 17) + ", max |sum-1| " + fmt(worst_mass) +
                  ", hand error " + fmt(hand_err)};
}

Outcome formula_suite() {
  const double eps = 1e-8;
  double worst = 0.0;
  auto near = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  near(relative_improvement(0.5, 0.6, 2, eps), 0.1 + eps);
  near(relative_improvement(0.7, 0.7, 3, eps), eps);
  near(relative_improvement(0.8, 0.6, 1, eps), 0.25 + eps);
  near(distance_from_goal(0.9, 0.45), 0.5);
  near(distance_from_goal(0.8, 0.8), 0.0);
  near(distance_from_goal(0.8, 0.95), 0.0);
  near(difficulty_score(0.5, 0.1 + eps), 0.5 / (0.1 + eps));
  near(difficulty_score(0.0, eps), 0.0);

  ScoreTable t;
  t.rows = {"m", "ref"};
  t.columns = {"a", "b"};
  t.values.resize(2, 2);
  t.values << 0.5, 1.0, 1.0, 0.5;
  t.human = {{"a", 1.0}, {"b", 0.5}};
  near(multitask_index(t, 0, IndexMode::kHuman), 0.25);
  near(multitask_index(t, 1, IndexMode::kHuman), 0.0);
  // Expert reference is the column max (1.0, 1.0): row m gives mean(-0.5, 0).
  near(multitask_index(t, 0, IndexMode::kExpert), -0.25);
  t.values.row(1) << 1.0, 1.0;
  near(multitask_index(t, 1, IndexMode::kExpert), 0.0);

  const bool alloc = imicb_allocation(4, 1) == std::vector<int>{1, 1, 1, 1} &&
                     imicb_allocation(4, 3) == std::vector<int>{3, 3, 3, 3};
  return {worst <= 1e-12 && alloc, "max abs error " + fmt(worst)};
}

Outcome gradient_oracle() {
  double worst = 0.0;
  int configs = 0;
  for (int seed = 0; configs < 12 && seed < 100; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed) * 104729u + 17u);
    const int in = 4 + seed % 3;
    const int classes = 2 + seed % 3;
    const int per = 2 + seed % 2;
    const std::vector<int> hidden = seed % 2 ? std::vector<int>{6} : std::vector<int>{5, 4};
    auto p = init_encoder(in, hidden, 3 + seed % 2, Activation::kTanh, rng, 1.5);
    std::normal_distribution<double> n;
    Eigen::MatrixXd x(classes * per, in);
    std::vector<int> ids;
    for (int c = 0; c < classes; ++c)
      for (int k = 0; k < per; ++k) ids.push_back(c);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    const double margin = 1.0;
    const auto trace = forward(p, x);
    const auto r = batch_hard_triplet(trace.embeddings, ids, margin);
    if (!(r.loss > 0.0)) continue;  // degenerate: hinge inactive everywhere
    GradBuffer buf(p);
    backward(p, trace, r.grad, buf);
    const double h = 1e-6;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      auto probe = [&](double& w, double analytic) {
        const double saved = w;
        w = saved + h;
        const double up = batch_hard_triplet(embed(p, x), ids, margin).loss;
        w = saved - h;
        const double down = batch_hard_triplet(embed(p, x), ids, margin).loss;
        w = saved;
        const double fd = (up - down) / (2 * h);
        if (std::abs(fd) > 1e-6 || std::abs(analytic) > 1e-6)
          worst = std::max(worst, std::abs(fd - analytic) /
                                      std::max({std::abs(fd), std::abs(analytic), 1e-8}));
      };
      for (Eigen::Index i = 0; i < p.layers[l].weight.size(); ++i)
        probe(p.layers[l].weight.data()[i], buf.grads[l].weight.data()[i]);
      for (Eigen::Index i = 0; i < p.layers[l].bias.size(); ++i)
        probe(p.layers[l].bias.data()[i], buf.grads[l].bias.data()[i]);
    }
    ++configs;
  }
  return {configs >= 10 && worst < 1e-4,
          std::to_string(configs) + " configurations, max relative error " + fmt(worst)};
}

Outcome coupling_identity() {
  auto c = load_config(kSource / "configs" / "default.json");
  const Corpus corpus = build_corpus(c.corpus);
  std::vector<const TaskData*> tasks;
  for (const auto& t : corpus.tasks) tasks.push_back(&t);
  SchedulerConfig sc = c.curriculum;
  sc.mode = CurriculumMode::kBalanced;
  sc.batches_per_task = 2;
  Trainer tr(tasks, initial_encoder(c), c.optimizer, sc, 7);
  tr.set_capture(true);
  tr.step();
  tr.step();
  const auto& params = tr.captured_params();
  GradBuffer sum(params);
  for (const auto& b : tr.captured_batches()) {
    GradBuffer one(params);
    const auto trace = forward(params, b.features);
    backward(params, trace, batch_hard_triplet(trace.embeddings, b.labels, sc.margin).grad, one);
    for (std::size_t l = 0; l < sum.grads.size(); ++l) {
      sum.grads[l].weight += one.grads[l].weight;
      sum.grads[l].bias += one.grads[l].bias;
    }
  }
  const auto& got = tr.captured_gradient();
  double worst = 0.0;
  for (std::size_t l = 0; l < sum.grads.size(); ++l) {
    worst = std::max(worst, (got.grads[l].weight - sum.grads[l].weight).cwiseAbs().maxCoeff());
    worst = std::max(worst, (got.grads[l].bias - sum.grads[l].bias).cwiseAbs().maxCoeff());
  }
  const bool ok = tr.captured_batches().size() == 8 && got.accumulation_count == 8 &&
                  worst <= 1e-12;
  return {ok, std::to_string(tr.captured_batches().size()) + " batches, max abs difference " +
                  fmt(worst)};
}

Outcome table_index() {
  auto table = read_score_table(kSource / "data" / "table1.csv");
  const auto refs = nlohmann::json::parse(slurp(kSource / "data" / "human_references.json"));
  for (const auto& [k, v] : refs.items()) table.human[k] = v.get<double>();
  auto zero_shot = [](const std::string& m) { return m.find("+IMIC") == std::string::npos; };
  std::ostringstream report;
  bool ok = true;

  const auto expert = score_paper_table(table, IndexMode::kExpert);
  report << "expert:";
  for (const auto& r : expert) report << ' ' << r.model << '=' << fmt(r.index);
  std::vector<std::string> top{expert.at(0).model, expert.at(1).model};
  std::sort(top.begin(), top.end());
  ok &= top == std::vector<std::string>{"EVA02+IMIC-A", "EVA02+IMIC-B"};
  for (std::size_t i = 2; i < expert.size(); ++i)
    if (zero_shot(expert[i].model)) ok &= expert[i].index < expert[1].index;

  const auto human = score_paper_table(table, IndexMode::kHuman);
  report << "; human:";
  for (const auto& r : human) {
    report << ' ' << r.model << '=' << fmt(r.index);
    if (r.model == "EVA02+IMIC-A" || r.model == "EVA02+IMIC-B") ok &= r.index > 0.0;
    if (zero_shot(r.model)) ok &= r.index < 0.0;
  }
  return {ok, report.str()};
}

Outcome forgetting() {
  const auto c = default_config("forgetting");
  const auto r = run_forgetting_comparison(c, true);
  // rows: sequential, imic-b, imic-a
  const double seq = r.pretrain_drop[0], b = r.pretrain_drop[1];
  const bool ok = seq > 0.0 && seq >= 2.0 * b && r.expert_index[1] > r.expert_index[0] &&
                  r.expert_index[2] > r.expert_index[0];
  std::ostringstream d;
  d << "pretrain " << r.accuracy_column << '=' << fmt(r.pretrain_accuracy) << ", drops seq/B/A "
    << fmt(seq) << '/' << fmt(b) << '/' << fmt(r.pretrain_drop[2]) << ", expert index seq/B/A "
    << fmt(r.expert_index[0]) << '/' << fmt(r.expert_index[1]) << '/' << fmt(r.expert_index[2])
    << ", " << r.finetune_steps << " steps";
  return {ok, d.str()};
}

Outcome linear_probe() {
  const auto& d = default_run();
  const auto& p = d.geometry.probe;
  return {p.mean >= 0.95, "10-fold task probe " + fmt(p.mean) + " +/- " +
                                       fmt(p.stddev) + " after " +
                                       std::to_string(d.result.steps) + " IMIC-B steps"};
}

Outcome angle_analytics() {
  auto basis = [](std::initializer_list<std::initializer_list<double>> cols) {
    Eigen::MatrixXd q(4, static_cast<Eigen::Index>(cols.size()));
    Eigen::Index j = 0;
    for (const auto& c : cols) {
      Eigen::Index i = 0;
      for (double v : c) q(i++, j) = v;
      ++j;
    }
    return q;
  };
  const double r = 1.0 / std::sqrt(2.0);
  const auto e12 = basis({{1, 0, 0, 0}, {0, 1, 0, 0}});
  const auto e34 = basis({{0, 0, 1, 0}, {0, 0, 0, 1}});
  const auto shared = basis({{1, 0, 0, 0}, {0, r, r, 0}});

  double identical = 0.0, orthogonal = 0.0, shared_err = 0.0;
  for (double a : principal_angles(e12, e12)) identical = std::max(identical, a);
  // Rotated basis of the same plane must also give zero angles.
  Eigen::MatrixXd rot = e12 * Eigen::Rotation2Dd(0.7).toRotationMatrix();
  for (double a : principal_angles(e12, rot)) identical = std::max(identical, a);
  for (double a : principal_angles(e12, e34))
    orthogonal = std::max(orthogonal, std::abs(a - std::numbers::pi / 2));
  const auto s = principal_angles(e12, shared);
  shared_err = std::max(std::abs(s.at(0)), std::abs(s.at(1) - std::numbers::pi / 4));
  const bool ok = identical < 1e-8 && orthogonal < 1e-8 && shared_err < 1e-8 && s.size() == 2;
  return {ok, "identical max " + fmt(identical) + ", orthogonal max |a-pi/2| " + fmt(orthogonal) +
                  ", shared-axis error " + fmt(shared_err)};
}

Outcome reconstruction() {
  const auto& g = default_run().geometry;
  double worst = 0.0;
  std::size_t cross = 0;
  std::ostringstream d;
  d << "first k within 0.02 AUC:";
  for (const auto& c : g.reconstruction) {
    worst = std::max(worst, std::abs(c.full_basis_delta));
    if (c.source == c.target) continue;
    ++cross;
    d << ' ' << c.source << "->" << c.target << '=';
    if (c.first_within < 0)
      d << "none";
    else
      d << c.first_within;
  }
  d << "; max |full-basis delta| " << fmt(worst);
  const std::size_t n = g.tasks.size();
  return {n > 1 && cross == n * (n - 1) && worst < 1e-10,
          d.str()};
}

Outcome determinism() {
  const auto& a = default_run();
  auto second = default_config("run_b");
  second.curriculum.mode = CurriculumMode::kBalanced;
  run(second);
  bool ok = true;
  std::string mismatched;
  for (const char* f : {"metrics.csv", "trace.jsonl"}) {
    const auto x = slurp(a.config.output_dir / f), y = slurp(second.output_dir / f);
    if (x.empty() || x != y) {
      ok = false;
      mismatched += std::string(" ") + f;
    }
  }
  // Adaptive mode exercises the sampled allocations.
  auto ad1 = default_config("run_adaptive_a");
  ad1.curriculum.mode = CurriculumMode::kAdaptive;
  ad1.evaluation.suites = {"retrieval"};
  auto ad2 = ad1;
  ad2.output_dir = scratch("run_adaptive_b");
  run(ad1);
  run(ad2);
  for (const char* f : {"metrics.csv", "trace.jsonl"}) {
    const auto x = slurp(ad1.output_dir / f), y = slurp(ad2.output_dir / f);
    if (x.empty() || x != y) {
      ok = false;
      mismatched += std::string(" adaptive/") + f;
    }
  }
  return {ok, ok ? "metrics.csv and trace.jsonl byte-identical for IMIC-B and IMIC-A"
                 : "mismatch:" + mismatched};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> fn;
    double budget_s;  // 0 when the criterion sets no runtime bound
  };
  const std::vector<Criterion> criteria = {
      {1, "scheduler conformance", scheduler_conformance, 1.0},
      {2, "formula unit suite", formula_suite, 0.0},
      {3, "gradient oracle", gradient_oracle, 30.0},
      {4, "gradient-coupling identity", coupling_identity, 0.0},
      {5, "score table index ordering", table_index, 0.0},
      {6, "forgetting comparison", forgetting, 300.0},
      {7, "linear task separability", linear_probe, 0.0},
      {8, "principal-angle analytics", angle_analytics, 0.0},
      {9, "subspace reconstruction", reconstruction, 0.0},
      {10, "determinism", determinism, 0.0},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_s > 0.0 && secs >= c.budget_s) {
      o.pass = false;
      o.detail += ", over the " + fmt(c.budget_s) + " s budget";
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s criterion %d (%s): %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
