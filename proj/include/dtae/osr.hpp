#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtae/tensor.hpp"

namespace dtae {

// Class prototypes μ_i (C × D) and the outlier threshold picked on the
// training set.
struct PrototypeSet {
  Tensord mu;
  double threshold = 0.0;
  double contamination = 0.01;

  std::size_t num_classes() const { return mu.rank() ? mu.dim(0) : 0; }
  std::size_t dim() const { return mu.rank() ? mu.dim(1) : 0; }
};

void to_json(nlohmann::json& j, const PrototypeSet& p);
void from_json(const nlohmann::json& j, PrototypeSet& p);

inline constexpr int kUnknown = -1;

enum class ProbabilityMode { kHead, kDistance };

struct OsrPrediction {
  double outlier_score = 0.0;
  std::vector<double> class_probs;
  int decision = kUnknown;  // 0..C-1 or kUnknown
};

// Squared Euclidean distance to every prototype.
std::vector<double> prototype_distances(std::span<const float> z, const PrototypeSet& protos);

// min_i ‖μ_i − z‖².
double outlier_score(std::span<const float> z, const PrototypeSet& protos);

// Softmax over −‖μ_i − z‖² (log-sum-exp form).
std::vector<double> distance_probability(std::span<const float> z, const PrototypeSet& protos);
// Softmax over classification-head logits.
std::vector<double> softmax(std::span<const float> logits);

// Unknown iff the outlier score is strictly above the threshold, else the
// most probable class (lowest index on ties). Head mode takes its
// probabilities from logits, which must then be non-empty.
OsrPrediction predict(std::span<const float> z, std::span<const float> logits,
                      const PrototypeSet& protos, ProbabilityMode mode);

std::size_t argmax(std::span<const double> v);

// Nearest-rank (1 − contamination) percentile of ascending scores.
double percentile_threshold(std::vector<double> scores, double contamination);

}  // namespace dtae
