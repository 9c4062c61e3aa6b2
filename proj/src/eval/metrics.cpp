#include "dtae/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>

#include "dtae/error.hpp"

namespace dtae::eval {

RocCurve roc_curve(std::span<const double> scores_known, std::span<const double> scores_unknown) {
  if (scores_known.empty() || scores_unknown.empty())
    throw DomainError("roc_curve needs at least one known and one unknown score");
  // (score, is_unknown), swept from the highest score down.
  std::vector<std::pair<double, bool>> all;
  all.reserve(scores_known.size() + scores_unknown.size());
  for (double s : scores_known) all.emplace_back(s, false);
  for (double s : scores_unknown) all.emplace_back(s, true);
  for (const auto& [s, u] : all)
    if (std::isnan(s)) throw DomainError("roc_curve: NaN score");
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  const auto nk = static_cast<double>(scores_known.size());
  const auto nu = static_cast<double>(scores_unknown.size());
  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  std::size_t fp = 0, tp = 0;
  for (std::size_t i = 0; i < all.size();) {
    // Equal scores cross the threshold together.
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) {
      (all[j].second ? tp : fp) += 1;
      ++j;
    }
    curve.points.push_back({static_cast<double>(fp) / nk, static_cast<double>(tp) / nu});
    i = j;
  }
  curve.points.back() = {1.0, 1.0};
  return curve;
}

double auc_at_fpr(const RocCurve& curve, double cap) {
  if (!(cap > 0.0 && cap <= 1.0)) throw DomainError("FPR cap must lie in (0, 1]");
  if (curve.points.size() < 2) throw DomainError("ROC curve needs at least two points");
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const RocPoint a = curve.points[i - 1];
    RocPoint b = curve.points[i];
    if (a.fpr >= cap) break;
    if (b.fpr > cap) {
      const double t = (cap - a.fpr) / (b.fpr - a.fpr);
      b = {cap, a.tpr + t * (b.tpr - a.tpr)};
    }
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  return area;
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < n_; ++p) s += at(truth, p);
  return s;
}

std::size_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::size_t s = 0;
  for (std::size_t t = 0; t < n_; ++t) s += at(t, pred);
  return s;
}

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0});
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, int num_known) {
  if (truth.size() != predicted.size()) throw ShapeError("confusion: label and prediction counts differ");
  if (num_known < 1) throw DomainError("confusion: need at least one known class");
  const auto c = static_cast<std::size_t>(num_known);
  ConfusionMatrix m(c + 1);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] > num_known)
      throw DomainError("confusion: true label " + std::to_string(truth[i]) + " out of range");
    if (predicted[i] < -1 || predicted[i] >= num_known)
      throw DomainError("confusion: prediction " + std::to_string(predicted[i]) + " out of range");
    const std::size_t p = predicted[i] < 0 ? c : static_cast<std::size_t>(predicted[i]);
    ++m.at(static_cast<std::size_t>(truth[i]), p);
  }
  return m;
}

F1Scores f1_decomposition(const ConfusionMatrix& m) {
  const std::size_t n = m.labels();
  if (n < 2) throw DomainError("f1_decomposition needs at least one known class plus unknown");
  F1Scores f;
  f.per_class.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double tp = static_cast<double>(m.at(i, i));
    const double fp = static_cast<double>(m.col_sum(i)) - tp;
    const double fn = static_cast<double>(m.row_sum(i)) - tp;
    const double denom = 2.0 * tp + fp + fn;
    f.per_class[i] = denom > 0.0 ? 2.0 * tp / denom : 0.0;
  }
  const std::size_t c = n - 1;
  f.known = std::accumulate(f.per_class.begin(), f.per_class.begin() + static_cast<std::ptrdiff_t>(c), 0.0) /
            static_cast<double>(c);
  f.unknown = f.per_class[c];
  f.overall = std::accumulate(f.per_class.begin(), f.per_class.end(), 0.0) / static_cast<double>(n);
  return f;
}

double openness(std::size_t n_train, std::size_t n_test, std::size_t n_target) {
  if (n_train < 1 || n_test < 1 || n_target < 1) throw DomainError("openness: class counts must be >= 1");
  return 1.0 - std::sqrt(2.0 * static_cast<double>(n_train) / static_cast<double>(n_test + n_target));
}

ScoreHistogram score_histograms(std::span<const double> scores_known,
                                std::span<const double> scores_unknown, std::size_t bins) {
  if (bins == 0) throw DomainError("histogram needs at least one bin");
  if (scores_known.empty() && scores_unknown.empty()) throw DomainError("histogram of no scores");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (auto set : {scores_known, scores_unknown})
    for (double s : set) {
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
  if (!(hi > lo)) hi = lo + 1.0;
  ScoreHistogram h;
  h.edges.resize(bins + 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + width * static_cast<double>(b);
  h.edges.back() = hi;
  h.known.assign(bins, 0);
  h.unknown.assign(bins, 0);
  auto bin_of = [&](double s) {
    const auto b = static_cast<std::size_t>(std::floor((s - lo) / width));
    return std::min(b, bins - 1);  // the maximum lands in the last, closed bin
  };
  for (double s : scores_known) ++h.known[bin_of(s)];
  for (double s : scores_unknown) ++h.unknown[bin_of(s)];
  return h;
}

void to_json(nlohmann::json& j, const ConfusionMatrix& m) {
  auto rows = nlohmann::json::array();
  for (std::size_t t = 0; t < m.labels(); ++t) {
    auto row = nlohmann::json::array();
    for (std::size_t p = 0; p < m.labels(); ++p) row.push_back(m.at(t, p));
    rows.push_back(std::move(row));
  }
  j = std::move(rows);
}

void from_json(const nlohmann::json& j, ConfusionMatrix& m) {
  const auto rows = j.get<std::vector<std::vector<std::size_t>>>();
  m = ConfusionMatrix(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != rows.size()) throw FormatError("confusion matrix is not square");
    for (std::size_t p = 0; p < rows.size(); ++p) m.at(t, p) = rows[t][p];
  }
}

void to_json(nlohmann::json& j, const F1Scores& f) {
  j = {{"per_class", f.per_class}, {"known", f.known}, {"unknown", f.unknown}, {"overall", f.overall}};
}

void from_json(const nlohmann::json& j, F1Scores& f) {
  j.at("per_class").get_to(f.per_class);
  j.at("known").get_to(f.known);
  j.at("unknown").get_to(f.unknown);
  j.at("overall").get_to(f.overall);
}

void to_json(nlohmann::json& j, const ScoreHistogram& h) {
  j = {{"edges", h.edges}, {"known", h.known}, {"unknown", h.unknown}};
}

void from_json(const nlohmann::json& j, ScoreHistogram& h) {
  j.at("edges").get_to(h.edges);
  j.at("known").get_to(h.known);
  j.at("unknown").get_to(h.unknown);
}

}  // namespace dtae::eval
