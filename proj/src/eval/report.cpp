#include "dtae/eval/report.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "dtae/train.hpp"

namespace dtae::eval {

void to_json(nlohmann::json& j, const RunInfo& r) {
  j = {{"dataset", r.dataset},         {"pretrain", r.pretrain}, {"loss", r.loss},
       {"group", r.group},             {"run", r.run},           {"seed", r.seed},
       {"split_seed", r.split_seed},   {"known_classes", r.known_classes}};
}

void from_json(const nlohmann::json& j, RunInfo& r) {
  j.at("dataset").get_to(r.dataset);
  j.at("pretrain").get_to(r.pretrain);
  j.at("loss").get_to(r.loss);
  j.at("group").get_to(r.group);
  j.at("run").get_to(r.run);
  j.at("seed").get_to(r.seed);
  j.at("split_seed").get_to(r.split_seed);
  j.at("known_classes").get_to(r.known_classes);
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"run", r.info},
       {"auc_100", r.auc_100},
       {"auc_10", r.auc_10},
       {"f1_per_class", r.f1.per_class},
       {"f1_known", r.f1.known},
       {"f1_unknown", r.f1.unknown},
       {"f1_overall", r.f1.overall},
       {"confusion", r.confusion},
       {"score_histograms", r.histogram},
       {"openness", r.openness},
       {"threshold", r.threshold},
       {"probability_mode", r.probability_mode},
       {"test_known", r.test_known},
       {"test_unknown", r.test_unknown}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  j.at("run").get_to(r.info);
  j.at("auc_100").get_to(r.auc_100);
  j.at("auc_10").get_to(r.auc_10);
  j.at("f1_per_class").get_to(r.f1.per_class);
  j.at("f1_known").get_to(r.f1.known);
  j.at("f1_unknown").get_to(r.f1.unknown);
  j.at("f1_overall").get_to(r.f1.overall);
  j.at("confusion").get_to(r.confusion);
  j.at("score_histograms").get_to(r.histogram);
  j.at("openness").get_to(r.openness);
  j.at("threshold").get_to(r.threshold);
  j.at("probability_mode").get_to(r.probability_mode);
  j.at("test_known").get_to(r.test_known);
  j.at("test_unknown").get_to(r.test_unknown);
}

ProbabilityMode default_probability_mode(const nn::Model& model) {
  return model.has_head() && model.spec().head->kind == nn::HeadKind::kClassification
             ? ProbabilityMode::kHead
             : ProbabilityMode::kDistance;
}

Evaluation evaluate(nn::Model& model, const PrototypeSet& protos, const OpenSetSplit& split,
                    ProbabilityMode mode, std::size_t histogram_bins) {
  const int c = split.num_known();
  if (protos.num_classes() != static_cast<std::size_t>(c))
    throw ShapeError("prototype count does not match the split's known classes");
  const auto enc = encode_subset(model, split, Subset::kTest);
  if (mode == ProbabilityMode::kHead && enc.logits.data.empty())
    throw ConfigError("head-mode probabilities need a classification head");

  Evaluation ev;
  const std::size_t n = split.test_size();
  ev.scores.resize(n);
  ev.predicted.resize(n);
  std::vector<double> known, unknown;
  for (std::size_t i = 0; i < n; ++i) {
    const auto logits = mode == ProbabilityMode::kHead ? enc.logits.row(i) : std::span<const float>{};
    const auto p = predict(enc.z.row(i), logits, protos, mode);
    ev.scores[i] = p.outlier_score;
    ev.predicted[i] = p.decision;
    (split.test_labels[i] == c ? unknown : known).push_back(p.outlier_score);
  }
  ev.z = enc.z;

  auto& r = ev.report;
  r.test_known = known.size();
  r.test_unknown = unknown.size();
  const auto roc = roc_curve(known, unknown);
  r.auc_100 = auc_at_fpr(roc, 1.0);
  r.auc_10 = auc_at_fpr(roc, 0.10);
  r.confusion = confusion(split.test_labels, ev.predicted, c);
  r.f1 = f1_decomposition(r.confusion);
  r.histogram = score_histograms(known, unknown, histogram_bins);
  // Every test class is present: known ones plus all unknown ones.
  r.openness = openness(static_cast<std::size_t>(c), kNumSourceClasses, static_cast<std::size_t>(c) + 1);
  r.threshold = protos.threshold;
  r.probability_mode = mode == ProbabilityMode::kHead ? "head" : "distance";
  r.info.known_classes = split.known_classes;
  r.info.split_seed = split.seed;
  return ev;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& m,
                         const std::vector<int>& known_classes) {
  if (m.labels() != known_classes.size() + 1) throw ShapeError("confusion matrix / class list mismatch");
  auto name = [&](std::size_t i) {
    return i < known_classes.size() ? std::to_string(known_classes[i]) : std::string("unknown");
  };
  std::ostringstream os;
  os << "true\\pred";
  for (std::size_t p = 0; p < m.labels(); ++p) os << ',' << name(p);
  os << '\n';
  for (std::size_t t = 0; t < m.labels(); ++t) {
    os << name(t);
    for (std::size_t p = 0; p < m.labels(); ++p) os << ',' << m.at(t, p);
    os << '\n';
  }
  write_text_atomic(path, os.str());
}

void write_histogram_csv(const std::filesystem::path& path, const ScoreHistogram& h) {
  std::ostringstream os;
  os << "bin,lo,hi,known,unknown\n";
  for (std::size_t b = 0; b < h.known.size(); ++b)
    os << b << ',' << fmt(h.edges[b]) << ',' << fmt(h.edges[b + 1]) << ',' << h.known[b] << ','
       << h.unknown[b] << '\n';
  write_text_atomic(path, os.str());
}

void write_representations_csv(const std::filesystem::path& path, const Evaluation& ev,
                               const OpenSetSplit& split) {
  const std::size_t n = split.test_size();
  if (ev.z.rank() != 2 || ev.z.dim(0) != n || ev.predicted.size() != n)
    throw ShapeError("representation dump does not match the test split");
  const std::size_t d = ev.z.dim(1);
  auto name = [&](int dense) {
    return dense >= 0 && dense < split.num_known() ? std::to_string(split.known_classes[static_cast<std::size_t>(dense)])
                                                   : std::string("unknown");
  };
  std::ostringstream os;
  os << "sample_id";
  for (std::size_t k = 0; k < d; ++k) os << ",z" << k;
  os << ",label,prediction\n";
  for (std::size_t i = 0; i < n; ++i) {
    os << split.test_indices[i];
    for (float v : ev.z.row(i)) os << ',' << fmt(v);
    os << ',' << name(split.test_labels[i]) << ',' << name(ev.predicted[i]) << '\n';
  }
  write_text_atomic(path, os.str());
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os << text;
    if (!os) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace dtae::eval
