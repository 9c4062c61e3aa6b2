#include "dtae/cli/commands.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "dtae/random.hpp"

namespace dtae::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Datasets are loaded once per process and shared read-only between cells.
DatasetPair dataset_for(const ExperimentConfig& c) {
  static std::mutex mu;
  static std::map<std::pair<std::string, std::string>, DatasetPair> cache;
  std::lock_guard lock(mu);
  const auto key = std::make_pair(c.dataset, fs::absolute(c.data_dir).lexically_normal().string());
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, load_dataset(c.dataset, c.data_dir)).first;
  return it->second;
}

OpenSetSplit split_for(const ExperimentConfig& c, std::size_t group) {
  const auto ds = dataset_for(c);
  return make_open_set_split(ds.train, ds.test, c.num_known, split_seed(c, group),
                             SplitLimits{c.max_train_samples, c.max_test_samples});
}

std::string cell_name(const ExperimentConfig& c, std::size_t group, std::size_t run) {
  return to_string(c.pretrain_method) + "-" + to_string(c.finetune_loss) + "/group" + std::to_string(group) +
         "/run" + std::to_string(run);
}

void log(const CommandOptions& o, const std::string& line) {
  static std::mutex mu;
  if (!o.log) return;
  std::lock_guard lock(mu);
  o.log(line);
}

// Everything a pretrained checkpoint depends on.
json pretrain_key(const ExperimentConfig& c, std::size_t group, std::size_t run) {
  return {{"dataset", c.dataset},
          {"method", to_string(c.pretrain_method)},
          {"epochs", c.pretrain_epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"dropout_keep", c.dropout_keep},
          {"num_known", c.num_known},
          {"seed", run_seed(c, group, run)},
          {"split_seed", split_seed(c, group)},
          {"max_train_samples", c.max_train_samples},
          {"max_test_samples", c.max_test_samples}};
}

json finetune_key(const ExperimentConfig& c, std::size_t group, std::size_t run, const std::string& init_hash) {
  auto k = pretrain_key(c, group, run);
  k.erase("epochs");
  k["pretrain_epochs"] = c.pretrain_method == PretrainMethod::kNone ? 0 : c.pretrain_epochs;
  k["loss"] = to_string(c.finetune_loss);
  k["finetune_epochs"] = c.finetune_epochs;
  k["margin"] = c.margin;
  k["init"] = init_hash;
  return k;
}

std::optional<nn::ModelCheckpoint> load_if_valid(const fs::path& path, const json& key) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    auto ckpt = nn::ModelCheckpoint::load(path);
    if (ckpt.metadata.value("key", json()) == key) return ckpt;
  } catch (const Error&) {
  }
  return std::nullopt;
}

std::optional<json> json_if_valid(const fs::path& path, const json& key) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    auto j = json::parse(eval::read_text(path));
    if (j.value("key", json()) == key) return j;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

void write_json(const fs::path& path, const json& j) { eval::write_text_atomic(path, j.dump(2) + "\n"); }

void write_loss_csv(const fs::path& path, const std::vector<EpochRecord>& history, bool with_raw) {
  std::ostringstream os;
  os << "epoch,loss" << (with_raw ? ",raw" : "") << ",seconds\n";
  char buf[64];
  for (const auto& r : history) {
    os << r.epoch;
    std::snprintf(buf, sizeof buf, ",%.9g", r.loss);
    os << buf;
    if (with_raw) {
      std::snprintf(buf, sizeof buf, ",%.9g", r.raw);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.3f\n", r.seconds);
    os << buf;
  }
  eval::write_text_atomic(path, os.str());
}

double read_seconds(const fs::path& path, const char* field) {
  try {
    return json::parse(eval::read_text(path)).at(field).get<double>();
  } catch (const std::exception&) {
    return 0.0;
  }
}

// Runs tasks on up to `jobs` threads. The first failure stops the remaining
// tasks and is rethrown once every worker has finished.
void run_parallel(std::size_t jobs, std::size_t count, const std::function<void(std::size_t)>& task) {
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count || failed) return;
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, count));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
}

// Re-raises a failure with the cell that produced it, keeping its kind.
template <typename F>
auto in_cell(const ExperimentConfig& c, std::size_t group, std::size_t run, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    rethrow_with_context(e, "cell " + cell_name(c, group, run) + ": ");
  } catch (const std::exception& e) {
    throw Error("internal", "cell " + cell_name(c, group, run) + ": " + e.what());
  }
}

struct Pretrained {
  fs::path path;
  nn::ModelCheckpoint checkpoint;
  double seconds = 0.0;
};

Pretrained ensure_pretrained(const ExperimentConfig& c, const CommandOptions& o, std::size_t group,
                             std::size_t run) {
  if (c.pretrain_method == PretrainMethod::kNone)
    throw ConfigError("pre-training method is 'none'; nothing to pretrain");
  const fs::path dir = pretrain_dir(c, group, run);
  const fs::path path = dir / kPretrainedCkpt;
  const json key = pretrain_key(c, group, run);
  if (!o.force) {
    if (auto ckpt = load_if_valid(path, key)) {
      log(o, "reuse " + path.string());
      return {path, std::move(*ckpt), read_seconds(dir / kTiming, "pretrain_seconds")};
    }
  }
  const auto split = split_for(c, group);
  auto tc = c.train_config(run_seed(c, group, run));
  const std::string tag = to_string(c.pretrain_method) + "-pretrain/group" + std::to_string(group) + "/run" +
                          std::to_string(run);
  tc.log = [&](const std::string& s) { log(o, tag + ": " + s); };
  auto result = pretrain(split, tc);
  result.checkpoint.metadata["key"] = key;
  fs::create_directories(dir);
  result.checkpoint.save(path);
  write_loss_csv(dir / kPretrainLoss, result.history, c.pretrain_method == PretrainMethod::kDtae);
  write_json(dir / kTiming, {{"pretrain_seconds", result.seconds}});
  eval::write_text_atomic(dir / kEffectiveConfig, to_toml(c));
  return {path, std::move(result.checkpoint), result.seconds};
}

struct Finetuned {
  nn::ModelCheckpoint checkpoint;
  PrototypeSet prototypes;
  double seconds = 0.0;
};

Finetuned ensure_finetuned(const ExperimentConfig& c, const CommandOptions& o, std::size_t group, std::size_t run,
                           const nn::ModelCheckpoint* init, const std::string& init_hash) {
  const fs::path dir = cell_dir(c, group, run);
  const json key = finetune_key(c, group, run, init_hash);
  std::optional<nn::ModelCheckpoint> ckpt;
  double seconds = read_seconds(dir / kTiming, "finetune_seconds");
  std::optional<OpenSetSplit> split;
  if (!o.force) ckpt = load_if_valid(dir / kFinetunedCkpt, key);
  if (ckpt) {
    log(o, "reuse " + (dir / kFinetunedCkpt).string());
  } else {
    split = split_for(c, group);
    auto tc = c.train_config(run_seed(c, group, run));
    const std::string tag = cell_name(c, group, run);
    tc.log = [&](const std::string& s) { log(o, tag + ": " + s); };
    auto result = finetune(*split, tc, init);
    result.checkpoint.metadata["key"] = key;
    fs::create_directories(dir);
    result.checkpoint.save(dir / kFinetunedCkpt);
    write_loss_csv(dir / kFinetuneLoss, result.history, false);
    seconds = result.seconds;
    write_json(dir / kTiming, {{"finetune_seconds", seconds}});
    ckpt = std::move(result.checkpoint);
  }

  const json proto_key = {{"finetuned", nn::file_hash(dir / kFinetunedCkpt)}, {"contamination", c.contamination}};
  PrototypeSet protos;
  std::optional<json> cached;
  if (!o.force) cached = json_if_valid(dir / kPrototypes, proto_key);
  if (cached) {
    protos = cached->get<PrototypeSet>();
  } else {
    if (!split) split = split_for(c, group);
    protos = compute_prototypes(*ckpt, *split, c.contamination);
    json j = protos;
    j["key"] = proto_key;
    write_json(dir / kPrototypes, j);
  }
  eval::write_text_atomic(dir / kEffectiveConfig, to_toml(c));
  return {std::move(*ckpt), std::move(protos), seconds};
}

eval::EvalReport evaluate_dir(const ExperimentConfig& c, const CommandOptions& o, const fs::path& dir,
                              std::size_t group, std::size_t run) {
  const fs::path ckpt_path = dir / kFinetunedCkpt, proto_path = dir / kPrototypes;
  for (const auto& p : {ckpt_path, proto_path})
    if (!fs::exists(p)) throw IoError("missing artifact " + p.string());
  const json key = {{"finetuned", nn::file_hash(ckpt_path)},
                    {"prototypes", nn::file_hash(proto_path)},
                    {"histogram_bins", c.histogram_bins}};
  const bool outputs_present = fs::exists(dir / kConfusion) && fs::exists(dir / kHistogram) &&
                               fs::exists(dir / kRepresentations);
  if (!o.force && outputs_present) {
    if (auto j = json_if_valid(dir / kReport, key)) {
      log(o, "reuse " + (dir / kReport).string());
      return j->get<eval::EvalReport>();
    }
  }
  const auto ckpt = nn::ModelCheckpoint::load(ckpt_path);
  if (ckpt.stage != nn::Stage::kFinetuned) throw ConfigError(ckpt_path.string() + " is not a fine-tuned checkpoint");
  const auto protos = json::parse(eval::read_text(proto_path)).get<PrototypeSet>();
  const auto split = split_for(c, group);
  auto model = nn::Model::from_checkpoint(ckpt);
  auto ev = eval::evaluate(model, protos, split, eval::default_probability_mode(model), c.histogram_bins);
  auto& info = ev.report.info;
  info.dataset = c.dataset;
  info.pretrain = to_string(c.pretrain_method);
  info.loss = to_string(c.finetune_loss);
  info.group = group;
  info.run = run;
  info.seed = run_seed(c, group, run);

  eval::write_confusion_csv(dir / kConfusion, ev.report.confusion, split.known_classes);
  eval::write_histogram_csv(dir / kHistogram, ev.report.histogram);
  eval::write_representations_csv(dir / kRepresentations, ev, split);
  json j = ev.report;
  j["key"] = key;
  write_json(dir / kReport, j);
  return ev.report;
}

ExperimentConfig with_arm(ExperimentConfig c, PretrainMethod m, FinetuneLoss l) {
  c.pretrain_method = m;
  c.finetune_loss = l;
  return c;
}

}  // namespace

std::uint64_t split_seed(const ExperimentConfig& c, std::size_t group) {
  return derive_seed(c.base_seed, {0x5b, group});
}

std::uint64_t run_seed(const ExperimentConfig& c, std::size_t group, std::size_t run) {
  return derive_seed(c.base_seed, {0x7e, group, run});
}

fs::path cell_dir(const ExperimentConfig& c, std::size_t group, std::size_t run) {
  return c.output_dir / c.dataset / (to_string(c.pretrain_method) + "-" + to_string(c.finetune_loss)) /
         ("group" + std::to_string(group)) / ("run" + std::to_string(run));
}

fs::path pretrain_dir(const ExperimentConfig& c, std::size_t group, std::size_t run) {
  return c.output_dir / c.dataset / (to_string(c.pretrain_method) + "-pretrain") / ("group" + std::to_string(group)) /
         ("run" + std::to_string(run));
}

fs::path cmd_pretrain(const ExperimentConfig& c, const CommandOptions& o) {
  c.validate();
  return in_cell(c, o.group, o.run, [&] { return ensure_pretrained(c, o, o.group, o.run).path; });
}

fs::path cmd_finetune(const ExperimentConfig& c, const CommandOptions& o) {
  c.validate();
  return in_cell(c, o.group, o.run, [&] {
    std::optional<nn::ModelCheckpoint> init;
    std::string init_hash = "none";
    if (o.init) {
      init = nn::ModelCheckpoint::load(*o.init);
      init_hash = nn::file_hash(*o.init);
    } else if (c.pretrain_method != PretrainMethod::kNone) {
      const fs::path p = pretrain_dir(c, o.group, o.run) / kPretrainedCkpt;
      if (!fs::exists(p)) throw IoError("no pretrained checkpoint at " + p.string() + " (run pretrain first or pass --init)");
      init = nn::ModelCheckpoint::load(p);
      init_hash = nn::file_hash(p);
    }
    if (init && init->stage != nn::Stage::kPretrained)
      throw ConfigError("init checkpoint has stage '" + nn::to_string(init->stage) + "', expected 'pretrained'");
    ensure_finetuned(c, o, o.group, o.run, init ? &*init : nullptr, init_hash);
    return cell_dir(c, o.group, o.run);
  });
}

eval::EvalReport cmd_evaluate(const ExperimentConfig& c, const CommandOptions& o) {
  c.validate();
  return in_cell(c, o.group, o.run,
                 [&] { return evaluate_dir(c, o, o.artifacts.value_or(cell_dir(c, o.group, o.run)), o.group, o.run); });
}

eval::EvalReport run_cell(const ExperimentConfig& c, const CommandOptions& o) {
  c.validate();
  return in_cell(c, o.group, o.run, [&] {
    const auto t0 = Clock::now();
    std::optional<Pretrained> pre;
    if (c.pretrain_method != PretrainMethod::kNone) pre = ensure_pretrained(c, o, o.group, o.run);
    const auto ft = ensure_finetuned(c, o, o.group, o.run, pre ? &pre->checkpoint : nullptr,
                                     pre ? nn::file_hash(pre->path) : "none");
    auto report = evaluate_dir(c, o, cell_dir(c, o.group, o.run), o.group, o.run);
    log(o, cell_name(c, o.group, o.run) + ": auc_100 " + std::to_string(report.auc_100) + " (" +
               std::to_string(seconds_since(t0)) + " s)");
    return report;
  });
}

namespace {

struct GridResult {
  std::vector<eval::ArmRuns> arms;
};

// Runs every (arm, group, run) cell of `arms_cfg`; pre-training shared by
// several losses happens once, before any fine-tuning.
GridResult run_grid(const std::vector<ExperimentConfig>& arms_cfg, const CommandOptions& o) {
  const std::size_t groups = arms_cfg.front().groups, runs = arms_cfg.front().runs_per_group;
  std::vector<ExperimentConfig> pre_cfg;
  for (const auto& a : arms_cfg) {
    if (a.pretrain_method == PretrainMethod::kNone) continue;
    bool seen = false;
    for (const auto& p : pre_cfg) seen = seen || p.pretrain_method == a.pretrain_method;
    if (!seen) pre_cfg.push_back(a);
  }
  const std::size_t per_arm = groups * runs;
  run_parallel(o.jobs, pre_cfg.size() * per_arm, [&](std::size_t i) {
    const auto& a = pre_cfg[i / per_arm];
    const std::size_t g = (i % per_arm) / runs, r = i % runs;
    in_cell(a, g, r, [&] { return ensure_pretrained(a, o, g, r).seconds; });
  });

  std::vector<eval::EvalReport> reports(arms_cfg.size() * per_arm);
  run_parallel(o.jobs, reports.size(), [&](std::size_t i) {
    CommandOptions co = o;
    co.group = (i % per_arm) / runs;
    co.run = i % runs;
    reports[i] = run_cell(arms_cfg[i / per_arm], co);
  });

  // Deterministic fold in (arm, group, run) order.
  GridResult out;
  for (std::size_t a = 0; a < arms_cfg.size(); ++a) {
    const auto& c = arms_cfg[a];
    eval::ArmRuns arm;
    arm.pretrain = to_string(c.pretrain_method);
    arm.loss = to_string(c.finetune_loss);
    for (std::size_t k = 0; k < per_arm; ++k) {
      const std::size_t g = k / runs, r = k % runs;
      arm.reports.push_back(reports[a * per_arm + k]);
      if (c.pretrain_method != PretrainMethod::kNone)
        arm.pretrain_seconds.push_back(read_seconds(pretrain_dir(c, g, r) / kTiming, "pretrain_seconds"));
      arm.finetune_seconds.push_back(read_seconds(cell_dir(c, g, r) / kTiming, "finetune_seconds"));
    }
    out.arms.push_back(std::move(arm));
  }
  return out;
}

}  // namespace

eval::AggregateResult cmd_experiment(const ExperimentConfig& c, const CommandOptions& o) {
  c.validate();
  std::vector<ExperimentConfig> arms;
  for (auto l : c.experiment_losses)
    for (auto m : c.experiment_pretrain) arms.push_back(with_arm(c, m, l));
  const auto grid = run_grid(arms, o);
  const auto agg = eval::aggregate(grid.arms);

  const fs::path out = c.output_dir / c.dataset;
  eval::write_text_atomic(out / "table1.csv", eval::table_csv(agg, eval::kAucMetrics));
  eval::write_text_atomic(out / "table2.csv", eval::table_csv(agg, eval::kF1Metrics));
  eval::write_text_atomic(out / "timing.csv", eval::timing_csv(agg));
  json j = agg;
  j["groups"] = c.groups;
  j["runs_per_group"] = c.runs_per_group;
  write_json(out / "aggregate.json", j);
  eval::write_text_atomic(out / kEffectiveConfig, to_toml(c));
  return agg;
}

std::vector<OpennessRow> cmd_openness(const ExperimentConfig& c, const CommandOptions& o) {
  c.validate();
  std::vector<OpennessRow> rows;
  json meta = json::array();
  for (int k = c.openness_min_known; k <= c.openness_max_known; ++k) {
    std::vector<ExperimentConfig> arms;
    for (auto m : c.openness_methods) {
      auto a = with_arm(c, m, c.finetune_loss);
      a.num_known = k;
      a.output_dir = c.output_dir / c.dataset / "openness" / ("known" + std::to_string(k));
      arms.push_back(std::move(a));
    }
    const auto grid = run_grid(arms, o);
    // Every test class appears at test time: n_test = 10, n_target = k + 1.
    const double op = eval::openness(static_cast<std::size_t>(k), kNumSourceClasses, static_cast<std::size_t>(k) + 1);
    for (const auto& arm : grid.arms) {
      std::vector<double> auc;
      for (const auto& r : arm.reports) auc.push_back(r.auc_100);
      rows.push_back({k, op, arm.pretrain, eval::summarize(auc)});
    }
  }

  std::ostringstream csv;
  csv << "n_train,openness,method,loss,runs,auc_100_mean,auc_100_std\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.4f,%s,%s,%zu,%.4f,%.4f\n", r.n_train, r.openness, r.method.c_str(),
                  to_string(c.finetune_loss).c_str(), r.auc_100.n, r.auc_100.mean, r.auc_100.stddev);
    csv << buf;
  }
  const fs::path out = c.output_dir / c.dataset / "openness";
  eval::write_text_atomic(out / "openness.csv", csv.str());
  for (const auto& r : rows)
    meta.push_back({{"n_train", r.n_train},
                    {"openness", r.openness},
                    {"method", r.method},
                    {"auc_100_mean", r.auc_100.mean},
                    {"auc_100_std", r.auc_100.stddev},
                    {"runs", r.auc_100.n}});
  const double lo = eval::openness(static_cast<std::size_t>(c.openness_max_known), kNumSourceClasses,
                                   static_cast<std::size_t>(c.openness_max_known) + 1);
  const double hi = eval::openness(static_cast<std::size_t>(c.openness_min_known), kNumSourceClasses,
                                   static_cast<std::size_t>(c.openness_min_known) + 1);
  write_json(out / "openness.json",
             {{"rows", meta},
              {"loss", to_string(c.finetune_loss)},
              {"openness_range", {lo, hi}},
              {"note", "openness = 1 - sqrt(2*n_train/(n_test+n_target)) with n_test=10, n_target=n_train+1, "
                       "evaluated as written; n_train=9 gives 0.0513 and n_train=8 gives 0.0823"}});
  eval::write_text_atomic(out / kEffectiveConfig, to_toml(c));
  return rows;
}

}  // namespace dtae::cli
