#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "imic/curriculum.hpp"
#include "imic/encoder.hpp"
#include "imic/geometry.hpp"
#include "imic/metrics.hpp"
#include "imic/triplet.hpp"

using namespace imic;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

std::vector<int> pk_labels(int p, int k) {
  std::vector<int> ids;
  for (int c = 0; c < p; ++c)
    for (int j = 0; j < k; ++j) ids.push_back(c);
  return ids;
}

}  // namespace

// One P x K = 10 x 4 batch through embed, loss and backward.
static void BM_BatchForwardBackward(benchmark::State& state) {
  Rng rng(1);
  const int hidden[] = {64};
  const auto params = init_encoder(32, hidden, static_cast<int>(state.range(0)),
                                   Activation::kTanh, rng);
  const auto x = gaussian(40, 32, rng);
  const auto ids = pk_labels(10, 4);
  GradBuffer buf(params);
  for (auto _ : state) {
    const auto trace = forward(params, x);
    const auto r = batch_hard_triplet(trace.embeddings, ids, 0.35);
    backward(params, trace, r.grad, buf);
    benchmark::DoNotOptimize(buf.grads.front().weight.data());
  }
}
BENCHMARK(BM_BatchForwardBackward)->Arg(16)->Arg(32);

static void BM_TripletLoss(benchmark::State& state) {
  Rng rng(2);
  const auto ids = pk_labels(static_cast<int>(state.range(0)), 4);
  const auto e = normalize_rows(gaussian(static_cast<Eigen::Index>(ids.size()), 32, rng));
  for (auto _ : state) benchmark::DoNotOptimize(batch_hard_triplet(e, ids, 0.35).loss);
}
BENCHMARK(BM_TripletLoss)->Arg(10)->Arg(40);

static void BM_TaskProbabilities(benchmark::State& state) {
  const std::vector<double> scores{0.9, 0.052, 0.024, 0.024};
  for (auto _ : state) benchmark::DoNotOptimize(task_scores_to_probabilities(scores, 0.05));
}
BENCHMARK(BM_TaskProbabilities);

static void BM_PrincipalAngles(benchmark::State& state) {
  Rng rng(3);
  const auto n = state.range(0);
  const auto a = task_subspace(gaussian(400, n, rng));
  const auto b = task_subspace(gaussian(400, n, rng));
  for (auto _ : state) benchmark::DoNotOptimize(principal_angles(a, b));
}
BENCHMARK(BM_PrincipalAngles)->Arg(16)->Arg(64);

static void BM_AllPairScores(benchmark::State& state) {
  Rng rng(4);
  const auto ids = pk_labels(100, 4);
  const auto e = normalize_rows(gaussian(400, 32, rng));
  for (auto _ : state) benchmark::DoNotOptimize(all_pair_scores(e, ids));
}
BENCHMARK(BM_AllPairScores);

BENCHMARK_MAIN();
