// dtae: pre-train, fine-tune and evaluate open-set recognizers.
//
//   dtae pretrain   --config exp.toml --group 0 --run 0
//   dtae finetune   --config exp.toml [--init path/to/pretrained.ckpt]
//   dtae evaluate   --config exp.toml [--artifacts cell/dir]
//   dtae experiment --config exp.toml --jobs 4
//   dtae openness   --config exp.toml
//
// Failures print {"error": ..., "kind": ...} on stderr and exit nonzero.

#include <malloc.h>

#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dtae/cli/commands.hpp"

namespace {

using dtae::cli::CommandOptions;
using dtae::cli::ExperimentConfig;

struct Flags {
  std::string config;
  std::optional<std::string> dataset, pretrain, loss, data_dir, output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> pretrain_epochs, finetune_epochs, groups, runs, max_train, max_test;
  std::optional<int> num_known;
  std::size_t jobs = 1;
  bool force = false;
  bool quiet = false;
  std::size_t group = 0, run = 0;
  std::optional<std::string> init, artifacts;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "TOML configuration file")->check(CLI::ExistingFile);
  app->add_option("--dataset", f.dataset, "mnist, fashion_mnist or cifar10");
  app->add_option("--pretrain", f.pretrain, "dtae, rotnet or none");
  app->add_option("--loss", f.loss, "ce, ii or triplet");
  app->add_option("--seed", f.seed, "base seed of the run grid");
  app->add_option("--jobs", f.jobs, "cells run in parallel")->check(CLI::PositiveNumber);
  app->add_flag("--force", f.force, "recompute artifacts that already exist");
  app->add_option("--output-dir", f.output_dir, "root of the artifact tree");
  app->add_option("--data-dir", f.data_dir, "directory holding <dataset>/ subdirectories");
  app->add_option("--pretrain-epochs", f.pretrain_epochs);
  app->add_option("--finetune-epochs", f.finetune_epochs);
  app->add_option("--num-known", f.num_known, "known classes per split");
  app->add_option("--groups", f.groups);
  app->add_option("--runs", f.runs, "runs per group");
  app->add_option("--max-train", f.max_train, "subsample the training split (0 = all)");
  app->add_option("--max-test", f.max_test, "subsample the test split (0 = all)");
  app->add_flag("-q,--quiet", f.quiet, "no progress lines on stderr");
}

void add_cell(CLI::App* app, Flags& f) {
  app->add_option("--group", f.group, "group index of the cell");
  app->add_option("--run", f.run, "run index of the cell");
}

ExperimentConfig resolve(const Flags& f) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : dtae::cli::load_config(f.config);
  if (f.dataset) c.dataset = *f.dataset;
  if (f.pretrain) c.pretrain_method = dtae::pretrain_method_from_string(*f.pretrain);
  if (f.loss) c.finetune_loss = dtae::finetune_loss_from_string(*f.loss);
  if (f.seed) c.base_seed = *f.seed;
  if (f.data_dir) c.data_dir = *f.data_dir;
  if (f.output_dir) c.output_dir = *f.output_dir;
  if (f.pretrain_epochs) c.pretrain_epochs = *f.pretrain_epochs;
  if (f.finetune_epochs) c.finetune_epochs = *f.finetune_epochs;
  if (f.num_known) c.num_known = *f.num_known;
  if (f.groups) c.groups = *f.groups;
  if (f.runs) c.runs_per_group = *f.runs;
  if (f.max_train) c.max_train_samples = *f.max_train;
  if (f.max_test) c.max_test_samples = *f.max_test;
  c.validate();
  return c;
}

CommandOptions options(const Flags& f) {
  CommandOptions o;
  o.group = f.group;
  o.run = f.run;
  o.jobs = f.jobs;
  o.force = f.force;
  if (f.init) o.init = *f.init;
  if (f.artifacts) o.artifacts = *f.artifacts;
  if (!f.quiet) o.log = [](const std::string& s) { std::cerr << s << '\n'; };
  return o;
}

int fail(const std::string& kind, const std::string& what) {
  std::cerr << nlohmann::json{{"error", what}, {"kind", kind}}.dump() << '\n';
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  // Activations are tens of megabytes; keep them on the heap instead of
  // mapping and faulting in fresh pages every step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Open-set recognition with transformation-based pre-training"};
  app.require_subcommand(1);
  Flags f;

  auto* pretrain = app.add_subcommand("pretrain", "pre-train an encoder for one cell");
  add_common(pretrain, f);
  add_cell(pretrain, f);

  auto* finetune = app.add_subcommand("finetune", "fine-tune one cell and compute its prototypes");
  add_common(finetune, f);
  add_cell(finetune, f);
  finetune->add_option("--init", f.init, "pretrained checkpoint (default: the cell's own)");

  auto* evaluate = app.add_subcommand("evaluate", "evaluate one fine-tuned cell on the test split");
  add_common(evaluate, f);
  add_cell(evaluate, f);
  evaluate->add_option("--artifacts", f.artifacts, "cell directory (default: from the layout)");

  auto* experiment = app.add_subcommand("experiment", "run and aggregate the full arm × group × run grid");
  add_common(experiment, f);

  auto* openness = app.add_subcommand("openness", "sweep the number of known classes");
  add_common(openness, f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    const auto c = resolve(f);
    const auto o = options(f);
    if (pretrain->parsed()) {
      std::cout << nlohmann::json{{"checkpoint", dtae::cli::cmd_pretrain(c, o).string()}}.dump() << '\n';
    } else if (finetune->parsed()) {
      std::cout << nlohmann::json{{"artifacts", dtae::cli::cmd_finetune(c, o).string()}}.dump() << '\n';
    } else if (evaluate->parsed()) {
      std::cout << nlohmann::json(dtae::cli::cmd_evaluate(c, o)).dump(2) << '\n';
    } else if (experiment->parsed()) {
      std::cout << nlohmann::json(dtae::cli::cmd_experiment(c, o)).dump(2) << '\n';
    } else if (openness->parsed()) {
      const auto rows = dtae::cli::cmd_openness(c, o);
      auto j = nlohmann::json::array();
      for (const auto& r : rows)
        j.push_back({{"n_train", r.n_train}, {"openness", r.openness}, {"method", r.method},
                     {"auc_100_mean", r.auc_100.mean}, {"runs", r.auc_100.n}});
      std::cout << j.dump(2) << '\n';
    }
  } catch (const dtae::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
