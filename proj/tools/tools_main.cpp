// imic: command-line front end for corpus generation, training, evaluation,
// geometry analysis, the forgetting comparison and score-table ranking.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "imic/config.hpp"
#include "imic/error.hpp"
#include "imic/harness.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("-c,--config", flags.config, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("-s,--seed", flags.seed, "Override the master seed");
  cmd->add_option("-o,--out", flags.out, "Override the output directory");
}

imic::ExperimentConfig resolve(const CommonFlags& flags) {
  imic::ExperimentConfig config = imic::load_config(flags.config);
  if (flags.seed) config.seed = *flags.seed;
  if (!flags.out.empty()) config.output_dir = flags.out;
  config.finalize();
  config.validate();
  return config;
}

void print_metrics(const std::map<std::string, double>& metrics) {
  for (const auto& [k, v] : metrics) std::cout << k << '\t' << imic::format_number(v) << '\n';
}

int cmd_gen(const CommonFlags& flags) {
  const auto config = resolve(flags);
  const auto corpus = imic::build_corpus(config.corpus);
  imic::export_corpus(corpus, config.output_dir / "corpus");
  std::cout << "wrote " << corpus.tasks.size() << " tasks, " << corpus.total_train_samples()
            << " training samples to " << (config.output_dir / "corpus").string() << '\n';
  return 0;
}

int cmd_train(const CommonFlags& flags) {
  auto config = resolve(flags);
  config.evaluation.suites.clear();
  const auto result = imic::run(config);
  std::cout << "steps " << result.steps << ", param hash " << result.param_hash << '\n';
  return 0;
}

int cmd_run(const CommonFlags& flags) {
  const auto config = resolve(flags);
  const auto result = imic::run(config);
  print_metrics(result.metrics);
  std::cout << "steps " << result.steps << ", " << result.files.size() << " files in "
            << config.output_dir.string() << '\n';
  return 0;
}

imic::EncoderParams checkpoint_for(const imic::ExperimentConfig& config, const std::string& path) {
  const fs::path p = path.empty() ? config.output_dir / "checkpoint.bin" : fs::path(path);
  return imic::load_checkpoint(p);
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint) {
  const auto config = resolve(flags);
  const auto params = checkpoint_for(config, checkpoint);
  const auto corpus = imic::build_corpus(config.corpus);
  const auto metrics = imic::evaluate_model(params, corpus, config.evaluation, config.seed);
  const auto columns = config.evaluation.columns.empty() ? imic::default_columns(corpus)
                                                         : config.evaluation.columns;
  fs::create_directories(config.output_dir);
  std::ofstream out(config.output_dir / "metrics.csv", std::ios::binary);
  imic::write_score_table(out, imic::make_score_table({"model"}, {metrics}, columns));
  print_metrics(metrics);
  return 0;
}

int cmd_analyze(const CommonFlags& flags, const std::string& checkpoint) {
  const auto config = resolve(flags);
  const auto params = checkpoint_for(config, checkpoint);
  const auto corpus = imic::build_corpus(config.corpus);
  const auto report = imic::analyze_embeddings(params, corpus, config.evaluation, config.seed,
                                               config.output_dir / "geometry");
  std::cout << "task probe " << imic::format_number(report.probe.mean) << " +- "
            << imic::format_number(report.probe.stddev) << '\n';
  for (std::size_t i = 0; i < report.tasks.size(); ++i)
    std::cout << "subspace " << report.tasks[i] << " dim " << report.subspace_dims[i] << '\n';
  for (const auto& c : report.reconstruction)
    if (c.source != c.target)
      std::cout << "reconstruction " << c.source << " -> " << c.target << " first k within "
                << config.evaluation.reconstruction_tolerance << ": " << c.first_within << '\n';
  return 0;
}

int cmd_forgetting(const CommonFlags& flags) {
  const auto config = resolve(flags);
  const auto report = imic::run_forgetting_comparison(config);
  std::cout << "pretrain " << report.accuracy_column << ' '
            << imic::format_number(report.pretrain_accuracy) << ", fine-tune steps "
            << report.finetune_steps << '\n';
  for (std::size_t i = 0; i < report.table.rows.size(); ++i)
    std::cout << report.table.rows[i] << "\tdrop " << imic::format_number(report.pretrain_drop[i])
              << "\texpert index " << imic::format_number(report.expert_index[i]) << '\n';
  return 0;
}

int cmd_score_table(const std::string& table_path, const std::string& mode,
                    const std::vector<std::string>& human, const std::string& config_path) {
  auto table = imic::read_score_table(fs::path(table_path));
  if (!config_path.empty())
    for (const auto& [k, v] : imic::load_config(config_path).evaluation.human_references)
      table.human[k] = v;
  for (const auto& entry : human) {
    const auto eq = entry.rfind('=');
    if (eq == std::string::npos || eq == 0)
      throw imic::ValidationError("--human", "expected column=value, got '" + entry + "'");
    try {
      table.human[entry.substr(0, eq)] = std::stod(entry.substr(eq + 1));
    } catch (const std::logic_error&) {
      throw imic::ValidationError("--human", "bad value in '" + entry + "'");
    }
  }
  const auto index_mode = mode == "human" ? imic::IndexMode::kHuman : imic::IndexMode::kExpert;
  const auto ranked = imic::score_paper_table(table, index_mode);
  std::cout << "rank,model,index\n";
  for (std::size_t i = 0; i < ranked.size(); ++i)
    std::cout << i + 1 << ',' << ranked[i].model << ',' << imic::format_number(ranked[i].index)
              << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interleaved multi-task curriculum training and analysis"};
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, run_f, eval_f, analyze_f, forget_f;
  std::string eval_ckpt, analyze_ckpt;
  auto* gen = app.add_subcommand("gen", "Generate and export the synthetic corpus");
  add_common(gen, gen_f);
  auto* train = app.add_subcommand("train", "Train under the configured curriculum");
  add_common(train, train_f);
  auto* run = app.add_subcommand("run", "Train, evaluate and analyze in one pass");
  add_common(run, run_f);
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on every task");
  add_common(eval, eval_f);
  eval->add_option("--checkpoint", eval_ckpt, "Defaults to <out>/checkpoint.bin");
  auto* analyze = app.add_subcommand("analyze", "Embedding geometry of a checkpoint");
  add_common(analyze, analyze_f);
  analyze->add_option("--checkpoint", analyze_ckpt, "Defaults to <out>/checkpoint.bin");
  auto* forget = app.add_subcommand("compare-forgetting",
                                    "Sequential vs IMIC-B vs IMIC-A from one pretrained encoder");
  add_common(forget, forget_f);

  std::string table_path, mode = "expert", score_config;
  std::vector<std::string> human;
  auto* score = app.add_subcommand("score-table", "Rank the rows of a score table");
  score->add_option("-t,--table", table_path, "Score table (CSV)")
      ->required()
      ->check(CLI::ExistingFile);
  score->add_option("-m,--mode", mode, "expert or human")
      ->check(CLI::IsMember({"expert", "human"}));
  score->add_option("--human", human, "Human reference, column=value (repeatable)");
  score->add_option("-c,--config", score_config, "Config supplying human_references");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen(gen_f);
    if (*train) return cmd_train(train_f);
    if (*run) return cmd_run(run_f);
    if (*eval) return cmd_eval(eval_f, eval_ckpt);
    if (*analyze) return cmd_analyze(analyze_f, analyze_ckpt);
    if (*forget) return cmd_forgetting(forget_f);
    if (*score) return cmd_score_table(table_path, mode, human, score_config);
  } catch (const imic::ValidationError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kExitValidation;
  } catch (const imic::ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kExitValidation;
  } catch (const imic::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
