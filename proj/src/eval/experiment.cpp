#include "dtae/eval/experiment.hpp"

#include <cstdio>
#include <sstream>

namespace dtae::eval {

double metric(const EvalReport& r, const std::string& name) {
  if (name == "auc_100") return r.auc_100;
  if (name == "auc_10") return r.auc_10;
  if (name == "f1_known") return r.f1.known;
  if (name == "f1_unknown") return r.f1.unknown;
  if (name == "f1_overall") return r.f1.overall;
  throw ConfigError("unknown metric '" + name + "'");
}

const MetricSummary& ArmAggregate::at(const std::string& name) const {
  for (const auto& [n, m] : metrics)
    if (n == name) return m;
  throw ConfigError("arm has no metric '" + name + "'");
}

const ArmAggregate* AggregateResult::find(const std::string& pretrain, const std::string& loss) const {
  for (const auto& a : arms)
    if (a.pretrain == pretrain && a.loss == loss) return &a;
  return nullptr;
}

namespace {

std::vector<double> values(const ArmRuns& arm, const std::string& name) {
  std::vector<double> v;
  for (const auto& r : arm.reports) v.push_back(metric(r, name));
  return v;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string pval(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

AggregateResult aggregate(const std::vector<ArmRuns>& arms, const std::string& baseline, double alpha) {
  AggregateResult out;
  out.baseline = baseline;
  out.alpha = alpha;
  for (const auto& arm : arms) {
    if (arm.reports.empty()) throw DomainError("arm " + arm.pretrain + "-" + arm.loss + " has no reports");
    const ArmRuns* base = nullptr;
    if (arm.pretrain != baseline)
      for (const auto& other : arms)
        if (other.pretrain == baseline && other.loss == arm.loss) base = &other;

    ArmAggregate agg;
    agg.pretrain = arm.pretrain;
    agg.loss = arm.loss;
    agg.runs = arm.reports.size();
    agg.pretrain_seconds = summarize(arm.pretrain_seconds);
    agg.finetune_seconds = summarize(arm.finetune_seconds);
    for (const auto& names : {kAucMetrics, kF1Metrics})
      for (const auto& name : names) {
        MetricSummary m;
        const auto xs = values(arm, name);
        m.summary = summarize(xs);
        if (base && xs.size() >= 2 && base->reports.size() >= 2) {
          const auto ys = values(*base, name);
          m.vs_baseline = welch_t_test(xs, ys);
          m.significant = m.vs_baseline->p < alpha && m.summary.mean > summarize(ys).mean;
        }
        agg.metrics.emplace_back(name, m);
      }
    out.arms.push_back(std::move(agg));
  }
  return out;
}

std::string table_csv(const AggregateResult& agg, const std::vector<std::string>& metrics) {
  std::ostringstream os;
  os << "loss,pretrain,runs";
  for (const auto& m : metrics) os << ',' << m << "_mean," << m << "_std," << m << "_p," << m << "_sig";
  os << '\n';
  for (const auto& arm : agg.arms) {
    os << arm.loss << ',' << arm.pretrain << ',' << arm.runs;
    for (const auto& name : metrics) {
      const auto& m = arm.at(name);
      os << ',' << num(m.summary.mean) << ',' << num(m.summary.stddev) << ','
         << (m.vs_baseline ? pval(m.vs_baseline->p) : "") << ',' << (m.significant ? "*" : "");
    }
    os << '\n';
  }
  return os.str();
}

std::string timing_csv(const AggregateResult& agg) {
  std::ostringstream os;
  os << "loss,pretrain,runs,pretrain_seconds_mean,finetune_seconds_mean\n";
  for (const auto& arm : agg.arms)
    os << arm.loss << ',' << arm.pretrain << ',' << arm.runs << ','
       << (arm.pretrain_seconds.n ? num(arm.pretrain_seconds.mean) : "") << ',' << num(arm.finetune_seconds.mean)
       << '\n';
  return os.str();
}

void to_json(nlohmann::json& j, const AggregateResult& a) {
  auto arms = nlohmann::json::array();
  for (const auto& arm : a.arms) {
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& [name, m] : arm.metrics) {
      nlohmann::json e = {{"mean", m.summary.mean}, {"std", m.summary.stddev}, {"n", m.summary.n},
                          {"significant", m.significant}};
      if (m.vs_baseline)
        e["vs_baseline"] = {{"t", m.vs_baseline->t}, {"df", m.vs_baseline->df}, {"p", m.vs_baseline->p}};
      metrics[name] = std::move(e);
    }
    arms.push_back({{"pretrain", arm.pretrain},
                    {"loss", arm.loss},
                    {"runs", arm.runs},
                    {"metrics", std::move(metrics)},
                    {"pretrain_seconds_mean", arm.pretrain_seconds.mean},
                    {"finetune_seconds_mean", arm.finetune_seconds.mean}});
  }
  j = {{"baseline", a.baseline}, {"alpha", a.alpha}, {"arms", std::move(arms)}};
}

}  // namespace dtae::eval
