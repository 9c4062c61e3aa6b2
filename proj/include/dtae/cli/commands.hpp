#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "dtae/cli/config.hpp"
#include "dtae/eval/experiment.hpp"
#include "dtae/eval/report.hpp"

namespace dtae::cli {

struct CommandOptions {
  std::size_t group = 0;
  std::size_t run = 0;
  std::size_t jobs = 1;
  bool force = false;
  std::optional<std::filesystem::path> init;       // finetune: explicit pretrained checkpoint
  std::optional<std::filesystem::path> artifacts;  // evaluate: cell directory
  std::function<void(const std::string&)> log;
};

// Seed grid. The split depends on the group only, so every arm of a group
// sees the same classes; run seeds are shared across arms (paired runs).
std::uint64_t split_seed(const ExperimentConfig& c, std::size_t group);
std::uint64_t run_seed(const ExperimentConfig& c, std::size_t group, std::size_t run);

// output_dir/<dataset>/<pretrain>-<loss>/group<g>/run<r>/
std::filesystem::path cell_dir(const ExperimentConfig& c, std::size_t group, std::size_t run);
// Pre-training does not depend on the fine-tuning loss, so arms sharing a
// method share one checkpoint: output_dir/<dataset>/<method>-pretrain/group<g>/run<r>/
std::filesystem::path pretrain_dir(const ExperimentConfig& c, std::size_t group, std::size_t run);

// File names inside a cell.
inline constexpr const char* kPretrainedCkpt = "pretrained.ckpt";
inline constexpr const char* kPretrainLoss = "pretrain_loss.csv";
inline constexpr const char* kFinetunedCkpt = "finetuned.ckpt";
inline constexpr const char* kFinetuneLoss = "finetune_loss.csv";
inline constexpr const char* kPrototypes = "prototypes.json";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kConfusion = "confusion.csv";
inline constexpr const char* kHistogram = "histogram.csv";
inline constexpr const char* kRepresentations = "representations.csv";
inline constexpr const char* kEffectiveConfig = "config.toml";
inline constexpr const char* kTiming = "timing.json";

std::filesystem::path cmd_pretrain(const ExperimentConfig& c, const CommandOptions& o);
// Returns the cell directory holding the fine-tuned checkpoint and prototypes.
std::filesystem::path cmd_finetune(const ExperimentConfig& c, const CommandOptions& o);
eval::EvalReport cmd_evaluate(const ExperimentConfig& c, const CommandOptions& o);
// Pretrain, fine-tune and evaluate one cell, reusing valid artifacts.
eval::EvalReport run_cell(const ExperimentConfig& c, const CommandOptions& o);

// Full grid over experiment_pretrain × experiment_losses × groups × runs.
// Writes table1.csv (AUC), table2.csv (F1), timing.csv and aggregate.json
// under output_dir/<dataset>/.
eval::AggregateResult cmd_experiment(const ExperimentConfig& c, const CommandOptions& o);

struct OpennessRow {
  int n_train = 0;
  double openness = 0.0;
  std::string method;
  eval::Summary auc_100;
};
// n_train over [openness_min_known, openness_max_known] for each method;
// cells live under output_dir/<dataset>/openness/known<k>/; openness.csv and
// openness.json go to output_dir/<dataset>/openness/.
std::vector<OpennessRow> cmd_openness(const ExperimentConfig& c, const CommandOptions& o);

}  // namespace dtae::cli
