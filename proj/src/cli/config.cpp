#include "dtae/cli/config.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "dtae/error.hpp"

namespace dtae::cli {

namespace {

const std::set<std::string> kDatasets = {"mnist", "fashion_mnist", "cifar10"};

std::string where(const toml::node& n, const std::string& source) {
  const auto& s = n.source();
  return source + ":" + std::to_string(s.begin.line);
}

template <typename T>
T scalar(const toml::node& n, const std::string& key, const std::string& source) {
  if constexpr (std::is_same_v<T, double>) {
    if (auto v = n.value<double>()) return *v;
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = n.value<std::string>()) return *v;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (auto v = n.value<bool>()) return *v;
  } else {
    if (n.is_integer()) {
      const auto v = n.as_integer()->get();
      if (v < 0) throw ConfigError(where(n, source) + ": '" + key + "' must be non-negative");
      return static_cast<T>(v);
    }
  }
  throw ConfigError(where(n, source) + ": '" + key + "' has the wrong type");
}

template <typename T, typename F>
std::vector<T> list(const toml::node& n, const std::string& key, const std::string& source, F convert) {
  const auto* arr = n.as_array();
  if (!arr) throw ConfigError(where(n, source) + ": '" + key + "' must be an array");
  std::vector<T> out;
  for (const auto& item : *arr) out.push_back(convert(scalar<std::string>(item, key, source)));
  return out;
}

void require_known_keys(const toml::table& t, const std::set<std::string>& allowed, const std::string& section,
                        const std::string& source) {
  for (const auto& [k, v] : t) {
    const std::string key(k.str());
    if (!allowed.count(key))
      throw ConfigError(where(v, source) + ": unknown key '" + (section.empty() ? key : section + "." + key) + "'");
  }
}

const toml::table& subtable(const toml::node& n, const std::string& name, const std::string& source) {
  const auto* t = n.as_table();
  if (!t) throw ConfigError(where(n, source) + ": '" + name + "' must be a table");
  return *t;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string quote(const std::string& s) {
  std::ostringstream os;
  os << toml::value<std::string>(s);
  return os.str();
}

template <typename T>
std::string string_list(const std::vector<T>& xs) {
  std::string out = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + quote(to_string(xs[i]));
  return out + "]";
}

}  // namespace

void ExperimentConfig::validate() const {
  if (!kDatasets.count(dataset))
    throw ConfigError("unknown dataset '" + dataset + "' (expected mnist, fashion_mnist or cifar10)");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (pretrain_epochs < 1 || finetune_epochs < 1) throw ConfigError("epoch counts must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(margin >= 0.0)) throw ConfigError("margin must be non-negative");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) throw ConfigError("dropout_keep must lie in (0, 1]");
  if (!(contamination > 0.0 && contamination < 1.0)) throw ConfigError("contamination must lie in (0, 1)");
  if (num_known < 2 || num_known > 9) throw ConfigError("num_known must lie in [2, 9]");
  if (groups < 1 || runs_per_group < 1) throw ConfigError("groups and runs_per_group must be >= 1");
  if (experiment_pretrain.empty() || experiment_losses.empty())
    throw ConfigError("experiment needs at least one pre-training method and one loss");
  if (openness_methods.empty()) throw ConfigError("openness needs at least one method");
  if (openness_min_known < 2 || openness_max_known > 9 || openness_min_known > openness_max_known)
    throw ConfigError("openness known-class range must satisfy 2 <= min <= max <= 9");
  if (histogram_bins < 1) throw ConfigError("histogram_bins must be >= 1");
  // TOML integers are signed 64-bit.
  if (base_seed > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
    throw ConfigError("base_seed must fit in a signed 64-bit integer");
}

TrainConfig ExperimentConfig::train_config(std::uint64_t seed) const {
  TrainConfig t;
  t.pretrain_method = pretrain_method;
  t.finetune_loss = finetune_loss;
  t.pretrain_epochs = pretrain_epochs;
  t.finetune_epochs = finetune_epochs;
  t.batch_size = batch_size;
  t.lr = lr;
  t.margin = margin;
  t.dropout_keep = dropout_keep;
  t.seed = seed;
  return t;
}

ExperimentConfig parse_config(const std::string& toml_text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    const auto& b = e.source().begin;
    throw ConfigError(source + ":" + std::to_string(b.line) + ":" + std::to_string(b.column) + ": " +
                      std::string(e.description()));
  }

  ExperimentConfig c;
  require_known_keys(root,
                     {"dataset", "data_dir", "output_dir", "batch_size", "lr", "margin", "dropout_keep",
                      "contamination", "num_known", "groups", "runs_per_group", "base_seed", "histogram_bins",
                      "max_train_samples", "max_test_samples", "pretrain", "finetune", "experiment", "openness"},
                     "", source);
  for (const auto& [k, v] : root) {
    const std::string key(k.str());
    if (key == "dataset") c.dataset = scalar<std::string>(v, key, source);
    else if (key == "data_dir") c.data_dir = scalar<std::string>(v, key, source);
    else if (key == "output_dir") c.output_dir = scalar<std::string>(v, key, source);
    else if (key == "batch_size") c.batch_size = scalar<std::size_t>(v, key, source);
    else if (key == "lr") c.lr = scalar<double>(v, key, source);
    else if (key == "margin") c.margin = scalar<double>(v, key, source);
    else if (key == "dropout_keep") c.dropout_keep = scalar<double>(v, key, source);
    else if (key == "contamination") c.contamination = scalar<double>(v, key, source);
    else if (key == "num_known") c.num_known = scalar<int>(v, key, source);
    else if (key == "groups") c.groups = scalar<std::size_t>(v, key, source);
    else if (key == "runs_per_group") c.runs_per_group = scalar<std::size_t>(v, key, source);
    else if (key == "base_seed") c.base_seed = scalar<std::uint64_t>(v, key, source);
    else if (key == "histogram_bins") c.histogram_bins = scalar<std::size_t>(v, key, source);
    else if (key == "max_train_samples") c.max_train_samples = scalar<std::size_t>(v, key, source);
    else if (key == "max_test_samples") c.max_test_samples = scalar<std::size_t>(v, key, source);
    else if (key == "pretrain") {
      const auto& t = subtable(v, key, source);
      require_known_keys(t, {"method", "epochs"}, key, source);
      if (auto* m = t.get("method")) c.pretrain_method = pretrain_method_from_string(scalar<std::string>(*m, "pretrain.method", source));
      if (auto* e = t.get("epochs")) c.pretrain_epochs = scalar<std::size_t>(*e, "pretrain.epochs", source);
    } else if (key == "finetune") {
      const auto& t = subtable(v, key, source);
      require_known_keys(t, {"loss", "epochs"}, key, source);
      if (auto* l = t.get("loss")) c.finetune_loss = finetune_loss_from_string(scalar<std::string>(*l, "finetune.loss", source));
      if (auto* e = t.get("epochs")) c.finetune_epochs = scalar<std::size_t>(*e, "finetune.epochs", source);
    } else if (key == "experiment") {
      const auto& t = subtable(v, key, source);
      require_known_keys(t, {"pretrain_methods", "losses"}, key, source);
      if (auto* m = t.get("pretrain_methods"))
        c.experiment_pretrain = list<PretrainMethod>(*m, "experiment.pretrain_methods", source, pretrain_method_from_string);
      if (auto* l = t.get("losses"))
        c.experiment_losses = list<FinetuneLoss>(*l, "experiment.losses", source, finetune_loss_from_string);
    } else if (key == "openness") {
      const auto& t = subtable(v, key, source);
      require_known_keys(t, {"methods", "min_known", "max_known"}, key, source);
      if (auto* m = t.get("methods"))
        c.openness_methods = list<PretrainMethod>(*m, "openness.methods", source, pretrain_method_from_string);
      if (auto* lo = t.get("min_known")) c.openness_min_known = scalar<int>(*lo, "openness.min_known", source);
      if (auto* hi = t.get("max_known")) c.openness_max_known = scalar<int>(*hi, "openness.max_known", source);
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string to_toml(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "dataset = " << quote(c.dataset) << '\n'
     << "data_dir = " << quote(c.data_dir.string()) << '\n'
     << "output_dir = " << quote(c.output_dir.string()) << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "lr = " << fmt_double(c.lr) << '\n'
     << "margin = " << fmt_double(c.margin) << '\n'
     << "dropout_keep = " << fmt_double(c.dropout_keep) << '\n'
     << "contamination = " << fmt_double(c.contamination) << '\n'
     << "num_known = " << c.num_known << '\n'
     << "groups = " << c.groups << '\n'
     << "runs_per_group = " << c.runs_per_group << '\n'
     << "base_seed = " << c.base_seed << '\n'
     << "histogram_bins = " << c.histogram_bins << '\n'
     << "max_train_samples = " << c.max_train_samples << '\n'
     << "max_test_samples = " << c.max_test_samples << '\n'
     << "\n[pretrain]\n"
     << "method = " << quote(to_string(c.pretrain_method)) << '\n'
     << "epochs = " << c.pretrain_epochs << '\n'
     << "\n[finetune]\n"
     << "loss = " << quote(to_string(c.finetune_loss)) << '\n'
     << "epochs = " << c.finetune_epochs << '\n'
     << "\n[experiment]\n"
     << "pretrain_methods = " << string_list(c.experiment_pretrain) << '\n'
     << "losses = " << string_list(c.experiment_losses) << '\n'
     << "\n[openness]\n"
     << "methods = " << string_list(c.openness_methods) << '\n'
     << "min_known = " << c.openness_min_known << '\n'
     << "max_known = " << c.openness_max_known << '\n';
  return os.str();
}

}  // namespace dtae::cli
