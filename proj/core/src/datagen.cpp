#include "imic/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "imic/error.hpp"

namespace imic {
namespace {

using nlohmann::json;

constexpr int kCorpusFormatVersion = 1;

Eigen::VectorXd gaussian_vector(int dim, double scale, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = scale * normal(rng);
  return v;
}

// Each observation is centroid + N(0, (spread^2 / dim) I), so `spread` is the
// expected norm of the deviation.
void fill_samples(const std::vector<Eigen::VectorXd>& centroids, int per_class,
                  double spread, Rng& rng, Eigen::MatrixXd& out,
                  std::vector<int>& labels) {
  const int dim = centroids.empty() ? 0 : static_cast<int>(centroids[0].size());
  const double scale = spread / std::sqrt(static_cast<double>(dim));
  out.resize(static_cast<Eigen::Index>(centroids.size()) * per_class, dim);
  labels.clear();
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    for (int s = 0; s < per_class; ++s, ++row) {
      out.row(row) = (centroids[c] + gaussian_vector(dim, scale, rng)).transpose();
      labels.push_back(static_cast<int>(c));
    }
  }
}

void add_noise(Eigen::MatrixXd& m, double noise, Rng& rng) {
  if (noise == 0.0) return;
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = noise / std::sqrt(static_cast<double>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) += scale * normal(rng);
}

std::string task_field(std::size_t i, const char* name) {
  return "tasks[" + std::to_string(i) + "]." + name;
}

void write_matrix(const Eigen::MatrixXd& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Eigen::MatrixXd read_matrix(const std::filesystem::path& path, Eigen::Index rows,
                            Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  Eigen::MatrixXd m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(m.size() * sizeof(double)))
    throw Error("truncated matrix file " + path.string());
  return m;
}

}  // namespace

std::string_view to_string(Regime regime) {
  switch (regime) {
    case Regime::kCoarseCategory: return "coarse-category";
    case Regime::kFineIdentity: return "fine-identity";
    case Regime::kFineIdentityDegraded: return "fine-identity-degraded";
    case Regime::kIntermediate: return "intermediate";
  }
  return "unknown";
}

Regime parse_regime(std::string_view text) {
  for (Regime r : {Regime::kCoarseCategory, Regime::kFineIdentity,
                   Regime::kFineIdentityDegraded, Regime::kIntermediate}) {
    if (to_string(r) == text) return r;
  }
  throw ValidationError("regime", "unknown regime '" + std::string(text) + "'");
}

void CorpusSpec::validate() const {
  if (tasks.size() < 2) throw ValidationError("tasks", "at least 2 tasks required");
  if (ambient_dim < 1) throw ValidationError("ambient_dim", "must be positive");
  if (positives_per_id < 1) throw ValidationError("positives_per_id", "must be positive");
  if (domain_separation < 0.0)
    throw ValidationError("domain_separation", "must be nonnegative");

  std::unordered_map<std::string, std::size_t> by_name;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& t = tasks[i];
    if (t.name.empty()) throw ValidationError(task_field(i, "name"), "empty task name");
    if (!by_name.emplace(t.name, i).second)
      throw ValidationError(task_field(i, "name"), "duplicate task name '" + t.name + "'");
    if (t.classes < 2) throw ValidationError(task_field(i, "classes"), "must be >= 2");
    if (t.samples_per_class < 2 * positives_per_id)
      throw ValidationError(task_field(i, "samples_per_class"),
                            "must be >= 2*K = " + std::to_string(2 * positives_per_id));
    if (t.test_samples_per_class < 0)
      throw ValidationError(task_field(i, "test_samples_per_class"), "must be >= 0");
    if (!(t.within_class_spread >= 0.0))
      throw ValidationError(task_field(i, "within_class_spread"), "must be >= 0");
    if (!(t.between_class_spread > 0.0))
      throw ValidationError(task_field(i, "between_class_spread"), "must be > 0");
    if (!(t.degradation_noise >= 0.0))
      throw ValidationError(task_field(i, "degradation_noise"), "must be >= 0");
    if (!(t.subsample_fraction > 0.0 && t.subsample_fraction <= 1.0))
      throw ValidationError(task_field(i, "subsample_fraction"), "must lie in (0, 1]");
    if (t.regime != Regime::kFineIdentityDegraded) {
      if (t.degradation_noise != 0.0)
        throw ValidationError(task_field(i, "degradation_noise"),
                              "only fine-identity-degraded tasks may be degraded");
      if (!t.twin.empty())
        throw ValidationError(task_field(i, "twin"),
                              "only fine-identity-degraded tasks have a twin");
    }
  }

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& t = tasks[i];
    if (t.regime != Regime::kFineIdentityDegraded) continue;
    auto it = by_name.find(t.twin);
    if (t.twin.empty() || it == by_name.end())
      throw ValidationError(task_field(i, "twin"),
                            "degraded task needs an existing twin task");
    const auto& twin = tasks[it->second];
    if (twin.regime != Regime::kFineIdentity)
      throw ValidationError(task_field(i, "twin"), "twin must be a fine-identity task");
    if (twin.classes != t.classes)
      throw ValidationError(task_field(i, "classes"), "must equal the twin's");
    if (twin.samples_per_class != t.samples_per_class)
      throw ValidationError(task_field(i, "samples_per_class"), "must equal the twin's");
    if (twin.test_samples_per_class != t.test_samples_per_class)
      throw ValidationError(task_field(i, "test_samples_per_class"), "must equal the twin's");
  }

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].regime != Regime::kCoarseCategory) continue;
    for (const auto& fine : tasks) {
      if (fine.regime == Regime::kFineIdentity &&
          tasks[i].within_class_spread < fine.within_class_spread)
        throw ValidationError(task_field(i, "within_class_spread"),
                              "coarse task must be at least as spread as '" +
                                  fine.name + "'");
    }
  }
}

std::size_t Corpus::total_train_samples() const {
  std::size_t n = 0;
  for (const auto& t : tasks) n += t.size();
  return n;
}

int Corpus::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i].name == name) return static_cast<int>(i);
  throw ContractError("unknown task '" + std::string(name) + "'");
}

Corpus build_corpus(const CorpusSpec& spec) {
  spec.validate();
  Corpus corpus;
  corpus.seed = spec.seed;
  corpus.ambient_dim = spec.ambient_dim;
  corpus.tasks.resize(spec.tasks.size());

  const int dim = spec.ambient_dim;
  const double centroid_scale = 1.0 / std::sqrt(static_cast<double>(dim));

  // Base tasks first so every degraded task can copy its twin.
  for (std::size_t i = 0; i < spec.tasks.size(); ++i) {
    const auto& t = spec.tasks[i];
    if (t.regime == Regime::kFineIdentityDegraded) continue;
    Rng rng = make_stream(spec.seed, "datagen/" + t.name);
    Eigen::VectorXd offset = gaussian_vector(dim, 1.0, rng);
    offset *= spec.domain_separation / std::max(offset.norm(), 1e-300);
    std::vector<Eigen::VectorXd> centroids;
    centroids.reserve(static_cast<std::size_t>(t.classes));
    for (int c = 0; c < t.classes; ++c)
      centroids.push_back(offset + gaussian_vector(dim, t.between_class_spread * centroid_scale, rng));

    TaskData& data = corpus.tasks[i];
    fill_samples(centroids, t.samples_per_class, t.within_class_spread, rng,
                 data.train, data.train_labels);
    fill_samples(centroids, t.test_samples_per_class, t.within_class_spread, rng,
                 data.test, data.test_labels);
  }

  for (std::size_t i = 0; i < spec.tasks.size(); ++i) {
    const auto& t = spec.tasks[i];
    TaskData& data = corpus.tasks[i];
    data.name = t.name;
    data.regime = t.regime;
    data.classes = t.classes;
    data.subsample_fraction = t.subsample_fraction;
    if (t.regime != Regime::kFineIdentityDegraded) continue;
    const TaskData& twin = corpus.tasks[static_cast<std::size_t>(corpus.index_of(t.twin))];
    Rng rng = make_stream(spec.seed, "datagen/" + t.name);
    data.train = twin.train;
    data.train_labels = twin.train_labels;
    data.test = twin.test;
    data.test_labels = twin.test_labels;
    add_noise(data.train, t.degradation_noise, rng);
    add_noise(data.test, t.degradation_noise, rng);
  }
  return corpus;
}

void export_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format_version"] = kCorpusFormatVersion;
  manifest["seed"] = corpus.seed;
  manifest["ambient_dim"] = corpus.ambient_dim;
  manifest["tasks"] = json::array();
  for (const auto& t : corpus.tasks) {
    const std::string train_file = t.name + ".train.f64";
    const std::string test_file = t.name + ".test.f64";
    write_matrix(t.train, dir / train_file);
    write_matrix(t.test, dir / test_file);
    manifest["tasks"].push_back({
        {"name", t.name},
        {"regime", std::string(to_string(t.regime))},
        {"classes", t.classes},
        {"subsample_fraction", t.subsample_fraction},
        {"train_rows", t.train.rows()},
        {"test_rows", t.test.rows()},
        {"train_file", train_file},
        {"test_file", test_file},
        {"train_labels", t.train_labels},
        {"test_labels", t.test_labels},
    });
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write manifest in " + dir.string());
  out << manifest.dump(1) << '\n';
}

Corpus import_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("missing manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("manifest.json", e.what());
  }
  if (manifest.value("format_version", 0) != kCorpusFormatVersion)
    throw ValidationError("format_version", "unsupported corpus format");

  Corpus corpus;
  corpus.seed = manifest.at("seed").get<std::uint64_t>();
  corpus.ambient_dim = manifest.at("ambient_dim").get<int>();
  for (const auto& jt : manifest.at("tasks")) {
    TaskData t;
    t.name = jt.at("name").get<std::string>();
    t.regime = parse_regime(jt.at("regime").get<std::string>());
    t.classes = jt.at("classes").get<int>();
    t.subsample_fraction = jt.at("subsample_fraction").get<double>();
    t.train_labels = jt.at("train_labels").get<std::vector<int>>();
    t.test_labels = jt.at("test_labels").get<std::vector<int>>();
    t.train = read_matrix(dir / jt.at("train_file").get<std::string>(),
                          jt.at("train_rows").get<Eigen::Index>(), corpus.ambient_dim);
    t.test = read_matrix(dir / jt.at("test_file").get<std::string>(),
                         jt.at("test_rows").get<Eigen::Index>(), corpus.ambient_dim);
    if (t.train_labels.size() != static_cast<std::size_t>(t.train.rows()) ||
        t.test_labels.size() != static_cast<std::size_t>(t.test.rows()))
      throw ValidationError("tasks." + t.name, "label count does not match rows");
    corpus.tasks.push_back(std::move(t));
  }
  return corpus;
}

std::vector<std::size_t> subsample_pool(const TaskData& data, double fraction,
                                        int K, Rng& rng) {
  const std::size_t n = data.size();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (fraction >= 1.0) return all;
  std::shuffle(all.begin(), all.end(), rng);
  const auto keep = std::min(n, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  std::vector<char> chosen(n, 0);
  std::vector<int> per_class(static_cast<std::size_t>(data.classes), 0);
  for (std::size_t i = 0; i < keep; ++i) {
    chosen[all[i]] = 1;
    ++per_class[static_cast<std::size_t>(data.train_labels[all[i]])];
  }
  for (std::size_t i = keep; i < n; ++i) {
    auto& count = per_class[static_cast<std::size_t>(data.train_labels[all[i]])];
    if (count < K) {
      chosen[all[i]] = 1;
      ++count;
    }
  }
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n; ++i)
    if (chosen[i]) pool.push_back(i);
  return pool;
}

Loader::Loader(const TaskData& data, int task_id, Rng rng)
    : Loader(data, task_id, [&] {
        std::vector<std::size_t> all(data.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
      }(), std::move(rng)) {}

Loader::Loader(const TaskData& data, int task_id, std::vector<std::size_t> pool, Rng rng)
    : data_(&data), task_(task_id), pool_(std::move(pool)), rng_(std::move(rng)) {
  std::set<int> ids;
  for (auto idx : pool_) {
    if (idx >= data.size()) throw ContractError("loader pool index out of range");
    ids.insert(data.train_labels[idx]);
  }
  identities_.assign(ids.begin(), ids.end());
  refresh();
  refreshes_ = 0;
}

void Loader::refresh() {
  order_ = pool_;
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
  ++refreshes_;
  const auto classes = static_cast<std::size_t>(data_->classes);
  pending_.assign(classes, {});
  pending_head_.assign(classes, 0);
  consumed_.assign(classes, {});
  for (auto idx : order_)
    pending_[static_cast<std::size_t>(data_->train_labels[idx])].push_back(idx);
}

void Loader::check_feasible(int P, int K) const {
  if (P < 1 || K < 1) throw ConfigError("P and K must be positive");
  if (static_cast<std::size_t>(P) * static_cast<std::size_t>(K) > pool_.size())
    throw ConfigError("P*K = " + std::to_string(P * K) + " exceeds dataset size " +
                      std::to_string(pool_.size()) + " of task " + data_->name);
  if (static_cast<std::size_t>(P) > identities_.size())
    throw ConfigError("task " + data_->name + " has fewer than P identities");
  for (int id : identities_) {
    if (pending_[static_cast<std::size_t>(id)].size() < static_cast<std::size_t>(K))
      throw ConfigError("identity " + std::to_string(id) + " of task " + data_->name +
                        " has fewer than K samples");
  }
}

BatchDraw Loader::next_batch(int P, int K) {
  check_feasible(P, K);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto remaining = [&](int id) {
    const auto c = static_cast<std::size_t>(id);
    return pending_[c].size() - pending_head_[c];
  };

  // Weighted sampling without replacement via exponential keys
  // (log(u) / w, larger first).
  auto pick = [&](std::vector<int> candidates, std::size_t want, bool weighted) {
    std::vector<std::pair<double, int>> keyed;
    keyed.reserve(candidates.size());
    for (int id : candidates) {
      const double u = std::max(unit(rng_), 1e-300);
      const double w = weighted ? static_cast<double>(remaining(id)) : 1.0;
      keyed.emplace_back(std::log(u) / w, id);
    }
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    std::vector<int> out;
    for (std::size_t i = 0; i < keyed.size() && i < want; ++i) out.push_back(keyed[i].second);
    return out;
  };

  std::vector<int> full, partial, spent;
  for (int id : identities_) {
    const auto r = remaining(id);
    if (r >= static_cast<std::size_t>(K)) full.push_back(id);
    else if (r > 0) partial.push_back(id);
    else spent.push_back(id);
  }
  const auto want = static_cast<std::size_t>(P);
  std::vector<int> chosen = pick(full, want, true);
  if (chosen.size() < want) {
    auto more = pick(partial, want - chosen.size(), true);
    chosen.insert(chosen.end(), more.begin(), more.end());
  }
  if (chosen.size() < want) {
    auto more = pick(spent, want - chosen.size(), false);
    chosen.insert(chosen.end(), more.begin(), more.end());
  }

  Batch batch;
  batch.task = task_;
  batch.features.resize(static_cast<Eigen::Index>(P) * K, data_->train.cols());
  for (int id : chosen) {
    const auto c = static_cast<std::size_t>(id);
    std::vector<std::size_t> fresh;
    while (fresh.size() < static_cast<std::size_t>(K) && pending_head_[c] < pending_[c].size())
      fresh.push_back(pending_[c][pending_head_[c]++]);
    const std::size_t reuse_from = consumed_[c].size();
    for (auto idx : fresh) {
      batch.indices.push_back(idx);
      batch.reused.push_back(false);
      consumed_[c].push_back(idx);
    }
    cursor_ += fresh.size();
    for (std::size_t k = fresh.size(); k < static_cast<std::size_t>(K); ++k) {
      // Draw from samples consumed before this batch when possible.
      const std::size_t span = reuse_from > 0 ? reuse_from : consumed_[c].size();
      std::uniform_int_distribution<std::size_t> any(0, span - 1);
      batch.indices.push_back(consumed_[c][any(rng_)]);
      batch.reused.push_back(true);
    }
  }
  for (std::size_t r = 0; r < batch.indices.size(); ++r) {
    batch.features.row(static_cast<Eigen::Index>(r)) =
        data_->train.row(static_cast<Eigen::Index>(batch.indices[r]));
    batch.labels.push_back(data_->train_labels[batch.indices[r]]);
  }

  BatchDraw draw{std::move(batch), false};
  if (cursor_ == pool_.size()) {
    draw.exhausted = true;
    refresh();
  }
  return draw;
}

}  // namespace imic
