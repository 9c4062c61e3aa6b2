#include "dtae/osr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dtae {

void to_json(nlohmann::json& j, const PrototypeSet& p) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < p.num_classes(); ++i) rows.emplace_back(p.mu.row(i).begin(), p.mu.row(i).end());
  j = {{"mu", rows}, {"threshold", p.threshold}, {"contamination", p.contamination}};
}

void from_json(const nlohmann::json& j, PrototypeSet& p) {
  const auto rows = j.at("mu").get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw FormatError("prototype set has no classes");
  std::vector<double> flat;
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw FormatError("ragged prototype matrix");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  p.mu = Tensord({rows.size(), rows.front().size()}, std::move(flat));
  j.at("threshold").get_to(p.threshold);
  j.at("contamination").get_to(p.contamination);
}

std::vector<double> prototype_distances(std::span<const float> z, const PrototypeSet& protos) {
  if (protos.num_classes() == 0) throw DomainError("empty prototype set");
  if (z.size() != protos.dim()) throw ShapeError("representation size does not match prototypes");
  std::vector<double> d(protos.num_classes(), 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto mu = protos.mu.row(i);
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double diff = mu[k] - static_cast<double>(z[k]);
      d[i] += diff * diff;
    }
  }
  return d;
}

double outlier_score(std::span<const float> z, const PrototypeSet& protos) {
  const auto d = prototype_distances(z, protos);
  return *std::min_element(d.begin(), d.end());
}

namespace {

std::vector<double> softmax_of(const std::vector<double>& a) {
  const double mx = *std::max_element(a.begin(), a.end());
  double sum = 0.0;
  for (double v : a) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> p(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) p[i] = std::exp(a[i] - lse);
  return p;
}

}  // namespace

std::vector<double> distance_probability(std::span<const float> z, const PrototypeSet& protos) {
  auto d = prototype_distances(z, protos);
  for (auto& v : d) v = -v;
  return softmax_of(d);
}

std::vector<double> softmax(std::span<const float> logits) {
  if (logits.empty()) throw DomainError("softmax of empty logits");
  return softmax_of(std::vector<double>(logits.begin(), logits.end()));
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

OsrPrediction predict(std::span<const float> z, std::span<const float> logits,
                      const PrototypeSet& protos, ProbabilityMode mode) {
  OsrPrediction out;
  out.outlier_score = outlier_score(z, protos);
  if (mode == ProbabilityMode::kHead) {
    if (logits.empty()) throw ConfigError("head-mode probabilities need classification logits");
    if (logits.size() != protos.num_classes()) throw ShapeError("logit count does not match prototype count");
    out.class_probs = softmax(logits);
  } else {
    out.class_probs = distance_probability(z, protos);
  }
  out.decision = out.outlier_score > protos.threshold ? kUnknown : static_cast<int>(argmax(out.class_probs));
  return out;
}

double percentile_threshold(std::vector<double> scores, double contamination) {
  if (scores.empty()) throw DomainError("percentile of an empty score set");
  if (!(contamination > 0.0 && contamination < 1.0)) throw ConfigError("contamination must lie in (0, 1)");
  std::sort(scores.begin(), scores.end());
  const double n = static_cast<double>(scores.size());
  // ceil((1 − c)·n) with a guard against the product landing a hair above an integer.
  auto rank = static_cast<std::size_t>(std::ceil((1.0 - contamination) * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, scores.size());
  return scores[rank - 1];
}

}  // namespace dtae
