#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dtae/train.hpp"

namespace dtae::cli {

// Every field has a default, so an empty file is a valid configuration.
struct ExperimentConfig {
  std::string dataset = "mnist";
  std::filesystem::path data_dir = "data";
  std::filesystem::path output_dir = "runs";

  PretrainMethod pretrain_method = PretrainMethod::kDtae;
  std::size_t pretrain_epochs = TrainConfig{}.pretrain_epochs;
  FinetuneLoss finetune_loss = FinetuneLoss::kCrossEntropy;
  std::size_t finetune_epochs = TrainConfig{}.finetune_epochs;

  std::size_t batch_size = 128;
  double lr = 0.001;
  double margin = 0.2;
  double dropout_keep = 0.2;
  double contamination = 0.01;
  int num_known = 6;
  std::size_t groups = 3;
  std::size_t runs_per_group = 10;
  std::uint64_t base_seed = 0;

  // Arms driven by `experiment` and methods compared by `openness`.
  std::vector<PretrainMethod> experiment_pretrain = {PretrainMethod::kNone, PretrainMethod::kRotNet,
                                                     PretrainMethod::kDtae};
  std::vector<FinetuneLoss> experiment_losses = {FinetuneLoss::kCrossEntropy, FinetuneLoss::kIi,
                                                 FinetuneLoss::kTriplet};
  std::vector<PretrainMethod> openness_methods = {PretrainMethod::kNone, PretrainMethod::kRotNet,
                                                  PretrainMethod::kDtae};
  int openness_min_known = 2;
  int openness_max_known = 9;

  std::size_t histogram_bins = 50;
  // Deterministic subsampling of the split (0 = everything); for quick runs.
  std::size_t max_train_samples = 0;
  std::size_t max_test_samples = 0;

  void validate() const;
  TrainConfig train_config(std::uint64_t seed) const;
  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(const std::string& toml_text, const std::string& source = "<string>");
ExperimentConfig load_config(const std::filesystem::path& path);
// Fully resolved TOML; parse_config(to_toml(c)) == c.
std::string to_toml(const ExperimentConfig& c);

}  // namespace dtae::cli
