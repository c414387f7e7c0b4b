#include "imic/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "imic/error.hpp"
#include "imic/rng.hpp"

namespace imic {
namespace {

using nlohmann::json;

// Reads one JSON object, remembering which keys were used so that leftover
// (unknown) keys can be rejected.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <typename T>
  void optional(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ValidationError(field(key), std::string("wrong type: ") + e.what());
    }
  }

  template <typename T>
  void required(const char* key, T& out) {
    if (!j_.contains(key)) throw ValidationError(field(key), "missing required key");
    optional(key, out);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ValidationError(field(it.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

TaskGenSpec read_task(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  TaskGenSpec t;
  std::string regime;
  r.required("name", t.name);
  r.required("regime", regime);
  try {
    t.regime = parse_regime(regime);
  } catch (const ValidationError&) {
    throw ValidationError(r.field("regime"), "unknown regime '" + regime + "'");
  }
  r.required("classes", t.classes);
  r.required("samples_per_class", t.samples_per_class);
  r.optional("test_samples_per_class", t.test_samples_per_class);
  r.optional("within_class_spread", t.within_class_spread);
  r.optional("between_class_spread", t.between_class_spread);
  r.optional("degradation_noise", t.degradation_noise);
  r.optional("twin", t.twin);
  r.optional("subsample_fraction", t.subsample_fraction);
  r.finish();
  return t;
}

void read_corpus(const json& j, CorpusSpec& c) {
  ObjectReader r(j, "corpus");
  r.required("ambient_dim", c.ambient_dim);
  r.optional("domain_separation", c.domain_separation);
  r.optional("positives_per_id", c.positives_per_id);
  const json* tasks = r.child("tasks");
  if (!tasks || !tasks->is_array()) throw ValidationError("corpus.tasks", "expected an array");
  for (std::size_t i = 0; i < tasks->size(); ++i)
    c.tasks.push_back(read_task((*tasks)[i], "corpus.tasks[" + std::to_string(i) + "]"));
  r.finish();
}

void read_encoder(const json& j, EncoderConfig& e) {
  ObjectReader r(j, "encoder");
  std::string activation = e.activation == Activation::kTanh ? "tanh" : "linear";
  r.optional("hidden", e.hidden);
  r.optional("output_dim", e.output_dim);
  r.optional("activation", activation);
  r.optional("init_gain", e.init_gain);
  if (activation == "tanh") e.activation = Activation::kTanh;
  else if (activation == "linear") e.activation = Activation::kLinear;
  else throw ValidationError("encoder.activation", "expected 'tanh' or 'linear'");
  r.finish();
}

void read_optimizer(const json& j, AdamConfig& a) {
  ObjectReader r(j, "optimizer");
  r.optional("lr", a.lr);
  r.optional("beta1", a.beta1);
  r.optional("beta2", a.beta2);
  r.optional("eps", a.eps);
  r.optional("weight_decay", a.weight_decay);
  r.finish();
}

void read_curriculum(const json& j, SchedulerConfig& s, std::map<std::string, double>& goals) {
  ObjectReader r(j, "curriculum");
  std::string mode(to_string(s.mode));
  r.optional("mode", mode);
  try {
    s.mode = parse_mode(mode);
  } catch (const ValidationError&) {
    throw ValidationError("curriculum.mode", "unknown curriculum mode '" + mode + "'");
  }
  r.optional("batches_per_task", s.batches_per_task);
  r.optional("total_batches", s.total_batches);
  r.optional("epsilon", s.epsilon);
  r.optional("floor", s.floor);
  r.optional("goals", goals);
  r.optional("cadence", s.cadence);
  r.optional("steps_per_epoch", s.steps_per_epoch);
  r.optional("block_steps", s.block_steps);
  r.optional("identities_per_batch", s.identities_per_batch);
  r.optional("positives_per_id", s.positives_per_id);
  r.optional("margin", s.margin);
  r.optional("subsample", s.subsample);
  r.finish();
}

void read_training(const json& j, TrainingConfig& t) {
  ObjectReader r(j, "training");
  r.optional("epochs", t.epochs);
  r.optional("pretrain_task", t.pretrain_task);
  r.optional("pretrain_steps", t.pretrain_steps);
  r.finish();
}

void read_evaluation(const json& j, EvaluationConfig& e) {
  ObjectReader r(j, "evaluation");
  r.optional("suites", e.suites);
  r.optional("far", e.far);
  r.optional("variance_fraction", e.variance_fraction);
  r.optional("probe_window", e.probe_window);
  r.optional("probe_folds", e.probe_folds);
  r.optional("probe_ridge", e.probe_ridge);
  r.optional("max_projection_k", e.max_projection_k);
  r.optional("reconstruction_tolerance", e.reconstruction_tolerance);
  r.optional("columns", e.columns);
  r.optional("human_references", e.human_references);
  r.finish();
}

}  // namespace

bool EvaluationConfig::has_suite(std::string_view name) const {
  return std::find(suites.begin(), suites.end(), name) != suites.end();
}

void ExperimentConfig::finalize() {
  corpus.seed = stream_seed(seed, "datagen");
  curriculum.goals.clear();
  if (!goals.empty()) {
    for (const auto& t : corpus.tasks) {
      auto it = goals.find(t.name);
      curriculum.goals.push_back(it == goals.end() ? 1.0 : it->second);
    }
  }
}

void ExperimentConfig::validate() const {
  if (schema_version != kConfigSchemaVersion)
    throw ValidationError("schema_version", "expected " + std::to_string(kConfigSchemaVersion));
  corpus.validate();
  if (encoder.output_dim < 1) throw ValidationError("encoder.output_dim", "must be positive");
  for (int h : encoder.hidden)
    if (h < 1) throw ValidationError("encoder.hidden", "widths must be positive");
  if (!(optimizer.lr > 0.0)) throw ValidationError("optimizer.lr", "must be positive");
  if (!(optimizer.weight_decay >= 0.0))
    throw ValidationError("optimizer.weight_decay", "must be nonnegative");
  if (curriculum.positives_per_id != corpus.positives_per_id)
    throw ValidationError("curriculum.positives_per_id", "must equal corpus.positives_per_id");
  for (const auto& [name, goal] : goals) {
    if (std::none_of(corpus.tasks.begin(), corpus.tasks.end(),
                     [&](const TaskGenSpec& t) { return t.name == name; }))
      throw ValidationError("curriculum.goals." + name, "unknown task");
    if (!(goal > 0.0 && goal <= 1.0))
      throw ValidationError("curriculum.goals." + name, "goal must lie in (0, 1]");
  }
  curriculum.validate(corpus.tasks.size());
  if (training.epochs < 0) throw ValidationError("training.epochs", "must be >= 0");
  if (training.pretrain_steps < 0) throw ValidationError("training.pretrain_steps", "must be >= 0");
  if (!training.pretrain_task.empty() &&
      std::none_of(corpus.tasks.begin(), corpus.tasks.end(),
                   [&](const TaskGenSpec& t) { return t.name == training.pretrain_task; }))
    throw ValidationError("training.pretrain_task", "unknown task '" + training.pretrain_task + "'");
  for (const auto& s : evaluation.suites)
    if (s != "retrieval" && s != "geometry")
      throw ValidationError("evaluation.suites", "unknown suite '" + s + "'");
  if (!(evaluation.far > 0.0 && evaluation.far < 1.0))
    throw ValidationError("evaluation.far", "must lie in (0, 1)");
  if (!(evaluation.variance_fraction > 0.0 && evaluation.variance_fraction <= 1.0))
    throw ValidationError("evaluation.variance_fraction", "must lie in (0, 1]");
  if (evaluation.probe_window < 1) throw ValidationError("evaluation.probe_window", "must be >= 1");
  if (evaluation.probe_folds < 2) throw ValidationError("evaluation.probe_folds", "must be >= 2");
  if (evaluation.max_projection_k < 1)
    throw ValidationError("evaluation.max_projection_k", "must be >= 1");
}

ExperimentConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw ValidationError("<root>", std::string("malformed JSON: ") + e.what());
  }
  ExperimentConfig c;
  ObjectReader r(root, "");
  r.required("schema_version", c.schema_version);
  if (c.schema_version != kConfigSchemaVersion)
    throw ValidationError("schema_version", "expected " + std::to_string(kConfigSchemaVersion));
  r.optional("seed", c.seed);
  std::string out = c.output_dir.string();
  r.optional("output_dir", out);
  c.output_dir = out;
  const json* corpus = r.child("corpus");
  if (!corpus) throw ValidationError("corpus", "missing required key");
  read_corpus(*corpus, c.corpus);
  if (const json* e = r.child("encoder")) read_encoder(*e, c.encoder);
  if (const json* o = r.child("optimizer")) read_optimizer(*o, c.optimizer);
  c.curriculum.positives_per_id = c.corpus.positives_per_id;
  if (const json* s = r.child("curriculum")) read_curriculum(*s, c.curriculum, c.goals);
  if (const json* t = r.child("training")) read_training(*t, c.training);
  if (const json* e = r.child("evaluation")) read_evaluation(*e, c.evaluation);
  r.finish();
  c.finalize();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["schema_version"] = c.schema_version;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  auto tasks = nlohmann::ordered_json::array();
  for (const auto& t : c.corpus.tasks) {
    nlohmann::ordered_json jt;
    jt["name"] = t.name;
    jt["regime"] = std::string(to_string(t.regime));
    jt["classes"] = t.classes;
    jt["samples_per_class"] = t.samples_per_class;
    jt["test_samples_per_class"] = t.test_samples_per_class;
    jt["within_class_spread"] = t.within_class_spread;
    jt["between_class_spread"] = t.between_class_spread;
    jt["degradation_noise"] = t.degradation_noise;
    if (!t.twin.empty()) jt["twin"] = t.twin;
    jt["subsample_fraction"] = t.subsample_fraction;
    tasks.push_back(std::move(jt));
  }
  j["corpus"] = {{"ambient_dim", c.corpus.ambient_dim},
                 {"domain_separation", c.corpus.domain_separation},
                 {"positives_per_id", c.corpus.positives_per_id},
                 {"tasks", tasks}};
  j["encoder"] = {{"hidden", c.encoder.hidden},
                  {"output_dim", c.encoder.output_dim},
                  {"activation", c.encoder.activation == Activation::kTanh ? "tanh" : "linear"},
                  {"init_gain", c.encoder.init_gain}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"weight_decay", c.optimizer.weight_decay}};
  const auto& s = c.curriculum;
  j["curriculum"] = {{"mode", std::string(to_string(s.mode))},
                     {"batches_per_task", s.batches_per_task},
                     {"total_batches", s.total_batches},
                     {"epsilon", s.epsilon},
                     {"floor", s.floor},
                     {"goals", c.goals},
                     {"cadence", s.cadence},
                     {"steps_per_epoch", s.steps_per_epoch},
                     {"block_steps", s.block_steps},
                     {"identities_per_batch", s.identities_per_batch},
                     {"positives_per_id", s.positives_per_id},
                     {"margin", s.margin},
                     {"subsample", s.subsample}};
  j["training"] = {{"epochs", c.training.epochs},
                   {"pretrain_task", c.training.pretrain_task},
                   {"pretrain_steps", c.training.pretrain_steps}};
  const auto& e = c.evaluation;
  j["evaluation"] = {{"suites", e.suites},
                     {"far", e.far},
                     {"variance_fraction", e.variance_fraction},
                     {"probe_window", e.probe_window},
                     {"probe_folds", e.probe_folds},
                     {"probe_ridge", e.probe_ridge},
                     {"max_projection_k", e.max_projection_k},
                     {"reconstruction_tolerance", e.reconstruction_tolerance},
                     {"columns", e.columns},
                     {"human_references", e.human_references}};
  return j.dump(2);
}

}  // namespace imic
