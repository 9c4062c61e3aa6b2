#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtae/dataio.hpp"
#include "dtae/eval/metrics.hpp"
#include "dtae/nn/model.hpp"
#include "dtae/osr.hpp"

namespace dtae::eval {

struct RunInfo {
  std::string dataset;
  std::string pretrain;
  std::string loss;
  std::size_t group = 0;
  std::size_t run = 0;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  std::vector<int> known_classes;

  bool operator==(const RunInfo&) const = default;
};

struct EvalReport {
  RunInfo info;
  double auc_100 = 0.0;
  double auc_10 = 0.0;
  F1Scores f1;
  ConfusionMatrix confusion;  // (C+1)×(C+1), unknown last
  ScoreHistogram histogram;
  double openness = 0.0;
  double threshold = 0.0;
  std::string probability_mode;
  std::size_t test_known = 0;
  std::size_t test_unknown = 0;
};

void to_json(nlohmann::json& j, const RunInfo& r);
void from_json(const nlohmann::json& j, RunInfo& r);
void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

// Report plus the per-sample data behind it.
struct Evaluation {
  EvalReport report;
  Tensorf z;                    // test representations
  std::vector<double> scores;   // outlier scores
  std::vector<int> predicted;   // 0..C-1 or kUnknown
};

// Head-mode probabilities for models with a classification head, distance mode otherwise.
ProbabilityMode default_probability_mode(const nn::Model& model);

Evaluation evaluate(nn::Model& model, const PrototypeSet& protos, const OpenSetSplit& split,
                    ProbabilityMode mode, std::size_t histogram_bins = 50);

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& m,
                         const std::vector<int>& known_classes);
void write_histogram_csv(const std::filesystem::path& path, const ScoreHistogram& h);
// sample_id (index into the test source), z_0..z_{D-1}, true label, prediction;
// labels are original class ids, "unknown" for the unknown class.
void write_representations_csv(const std::filesystem::path& path, const Evaluation& ev,
                               const OpenSetSplit& split);

// Whole-file write through a temporary sibling and rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace dtae::eval
