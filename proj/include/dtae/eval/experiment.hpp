#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtae/eval/report.hpp"
#include "dtae/eval/stats.hpp"

namespace dtae::eval {

inline const std::vector<std::string> kAucMetrics = {"auc_100", "auc_10"};
inline const std::vector<std::string> kF1Metrics = {"f1_known", "f1_unknown", "f1_overall"};

double metric(const EvalReport& r, const std::string& name);

// Reports of one (pretrain, loss) arm in (group, run) order.
struct ArmRuns {
  std::string pretrain;
  std::string loss;
  std::vector<EvalReport> reports;
  std::vector<double> pretrain_seconds;  // empty for the "none" arm
  std::vector<double> finetune_seconds;
};

struct MetricSummary {
  Summary summary;
  std::optional<WelchResult> vs_baseline;
  bool significant = false;  // p < alpha and mean above the baseline's
};

struct ArmAggregate {
  std::string pretrain;
  std::string loss;
  std::size_t runs = 0;
  std::vector<std::pair<std::string, MetricSummary>> metrics;
  Summary pretrain_seconds;
  Summary finetune_seconds;

  const MetricSummary& at(const std::string& name) const;
};

struct AggregateResult {
  std::string baseline;
  double alpha = 0.05;
  std::vector<ArmAggregate> arms;

  const ArmAggregate* find(const std::string& pretrain, const std::string& loss) const;
};

// Each arm is compared with the arm that shares its loss and uses `baseline`
// pre-training; arms without such a partner carry no test.
AggregateResult aggregate(const std::vector<ArmRuns>& arms, const std::string& baseline = "none",
                          double alpha = 0.05);

// Rows loss × pretrain; per metric: mean, std, p, and "*" when significant.
std::string table_csv(const AggregateResult& agg, const std::vector<std::string>& metrics);
// Mean wall-clock per pre-training method and arm.
std::string timing_csv(const AggregateResult& agg);

void to_json(nlohmann::json& j, const AggregateResult& a);

}  // namespace dtae::eval
