#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace dtae::eval {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

// Unknown is the positive class: a sample is flagged when its outlier score
// reaches the threshold. Starts at (0,0), ends at (1,1), monotone in both axes.
struct RocCurve {
  std::vector<RocPoint> points;
};

RocCurve roc_curve(std::span<const double> scores_known, std::span<const double> scores_unknown);

// Unnormalized trapezoidal area over FPR in [0, cap], interpolating at the cap.
double auc_at_fpr(const RocCurve& curve, double cap);

// Row = true label, column = predicted label. Labels 0..C-1 are the known
// classes, C is "unknown".
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t labels) : n_(labels), counts_(labels * labels, 0) {}

  std::size_t labels() const { return n_; }
  std::size_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * n_ + pred]; }
  std::size_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * n_ + pred]; }
  std::size_t row_sum(std::size_t truth) const;
  std::size_t col_sum(std::size_t pred) const;
  std::size_t total() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::size_t> counts_;
};

// Predictions use -1 (dtae::kUnknown) for the unknown decision; truth uses C.
ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, int num_known);

struct F1Scores {
  std::vector<double> per_class;  // C known classes, then unknown
  double known = 0.0;             // macro mean over the known classes
  double unknown = 0.0;
  double overall = 0.0;           // macro mean over all C+1 labels
};

// One-vs-rest F1 per label; a label with no true and no predicted samples scores 0.
F1Scores f1_decomposition(const ConfusionMatrix& m);

// 1 − sqrt(2·n_train / (n_test + n_target)).
double openness(std::size_t n_train, std::size_t n_test, std::size_t n_target);

// Known and unknown score counts over shared uniform bins spanning the pooled range.
struct ScoreHistogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> known;
  std::vector<std::size_t> unknown;
};

ScoreHistogram score_histograms(std::span<const double> scores_known,
                                std::span<const double> scores_unknown, std::size_t bins = 50);

void to_json(nlohmann::json& j, const ConfusionMatrix& m);
void from_json(const nlohmann::json& j, ConfusionMatrix& m);
void to_json(nlohmann::json& j, const F1Scores& f);
void from_json(const nlohmann::json& j, F1Scores& f);
void to_json(nlohmann::json& j, const ScoreHistogram& h);
void from_json(const nlohmann::json& j, ScoreHistogram& h);

}  // namespace dtae::eval
