#include "dtae/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dtae/losses.hpp"
#include "dtae/random.hpp"
#include "dtae/transforms.hpp"

namespace dtae {

std::string to_string(PretrainMethod m) {
  switch (m) {
    case PretrainMethod::kNone: return "none";
    case PretrainMethod::kRotNet: return "rotnet";
    case PretrainMethod::kDtae: return "dtae";
  }
  return "?";
}

std::string to_string(FinetuneLoss l) {
  switch (l) {
    case FinetuneLoss::kCrossEntropy: return "ce";
    case FinetuneLoss::kIi: return "ii";
    case FinetuneLoss::kTriplet: return "triplet";
  }
  return "?";
}

PretrainMethod pretrain_method_from_string(const std::string& s) {
  if (s == "none") return PretrainMethod::kNone;
  if (s == "rotnet") return PretrainMethod::kRotNet;
  if (s == "dtae") return PretrainMethod::kDtae;
  throw ConfigError("unknown pre-training method '" + s + "' (expected dtae, rotnet or none)");
}

FinetuneLoss finetune_loss_from_string(const std::string& s) {
  if (s == "ce") return FinetuneLoss::kCrossEntropy;
  if (s == "ii") return FinetuneLoss::kIi;
  if (s == "triplet") return FinetuneLoss::kTriplet;
  throw ConfigError("unknown fine-tuning loss '" + s + "' (expected ce, ii or triplet)");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (pretrain_epochs < 1 || finetune_epochs < 1) throw ConfigError("epoch counts must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(margin >= 0.0)) throw ConfigError("triplet margin must be non-negative");
}

nn::EncoderConfig encoder_config_for(const OpenSetSplit& split, const TrainConfig& cfg) {
  nn::EncoderConfig enc;
  enc.input_size = padded_size(*split.train_source);
  enc.dropout_keep = cfg.dropout_keep;
  enc.use_batchnorm = cfg.use_batchnorm;
  return enc;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

nlohmann::json train_metadata(const OpenSetSplit& split, const TrainConfig& cfg) {
  return {{"seed", cfg.seed},
          {"split_seed", split.seed},
          {"known_classes", split.known_classes},
          {"pretrain_method", to_string(cfg.pretrain_method)},
          {"finetune_loss", to_string(cfg.finetune_loss)},
          {"batch_size", cfg.batch_size},
          {"lr", cfg.lr}};
}

void log_epoch(const TrainConfig& cfg, const char* stage, const EpochRecord& r) {
  if (!cfg.log) return;
  std::ostringstream os;
  os << stage << " epoch " << r.epoch << " loss " << r.loss << " (" << r.seconds << " s)";
  cfg.log(os.str());
}

}  // namespace

TrainResult pretrain(const OpenSetSplit& split, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.pretrain_method == PretrainMethod::kNone) throw ConfigError("pre-training method is 'none'");
  const bool dtae = cfg.pretrain_method == PretrainMethod::kDtae;

  nn::ModelSpec spec;
  spec.encoder = encoder_config_for(split, cfg);
  spec.has_decoder = dtae;
  if (!dtae) spec.head = nn::HeadConfig{nn::HeadKind::kRotation, spec.encoder.repr_dim, kNumRotations};
  nn::Model model(spec, derive_seed(cfg.seed, {0x9e7}), nn::AdamConfig{.lr = cfg.lr});

  TrainResult result;
  const auto t_start = Clock::now();
  for (std::size_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    const auto t_epoch = Clock::now();
    BatchIterator it(split, cfg.batch_size, derive_seed(cfg.seed, {0x9e7, epoch}));
    double loss_sum = 0.0, raw_sum = 0.0;
    std::size_t steps = 0;
    while (auto batch = it.next()) {
      const auto views = expand_batch(*batch);
      model.zero_grad();
      const auto z = model.encoder().forward(views.pixels, true);
      double loss = 0.0;
      if (dtae) {
        const auto recon = model.decoder().forward(z, true);
        const auto l = dtae_loss(batch->pixels, recon, views.origin_index);
        model.encoder().backward(model.decoder().backward(l.mean.grad));
        loss = l.mean.scalar;
        raw_sum += l.raw;
      } else {
        const auto logits = model.head().forward(z, true);
        const auto l = rotnet_loss(logits, views.transform_ids);
        model.encoder().backward(model.head().backward(l.grad));
        loss = l.scalar;
      }
      model.step();
      loss_sum += loss;
      ++steps;
      if (cfg.max_steps_per_epoch && steps >= cfg.max_steps_per_epoch) break;
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(std::max<std::size_t>(steps, 1)),
                    raw_sum / static_cast<double>(std::max<std::size_t>(steps, 1)), seconds_since(t_epoch)};
    result.history.push_back(rec);
    log_epoch(cfg, dtae ? "dtae" : "rotnet", rec);
  }
  result.seconds = seconds_since(t_start);
  result.checkpoint = model.to_checkpoint(nn::Stage::kPretrained, train_metadata(split, cfg));
  return result;
}

TrainResult finetune(const OpenSetSplit& split, const TrainConfig& cfg, const nn::ModelCheckpoint* init) {
  cfg.validate();
  const int c = split.num_known();
  const bool ce = cfg.finetune_loss == FinetuneLoss::kCrossEntropy;

  nn::ModelSpec spec;
  spec.encoder = encoder_config_for(split, cfg);
  if (ce) spec.head = nn::HeadConfig{nn::HeadKind::kClassification, spec.encoder.repr_dim, static_cast<std::size_t>(c)};
  nn::Model model(spec, derive_seed(cfg.seed, {0xf17}), nn::AdamConfig{.lr = cfg.lr});
  if (init) model.load_encoder_from(*init);

  TrainResult result;
  const auto t_start = Clock::now();
  for (std::size_t epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
    const auto t_epoch = Clock::now();
    BatchIterator it(split, cfg.batch_size, derive_seed(cfg.seed, {0xf17, epoch}), /*stratified=*/!ce);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    while (auto batch = it.next()) {
      model.zero_grad();
      const auto z = model.encoder().forward(batch->pixels, true);
      double loss = 0.0;
      switch (cfg.finetune_loss) {
        case FinetuneLoss::kCrossEntropy: {
          const auto logits = model.head().forward(z, true);
          const auto l = cross_entropy(logits, batch->labels);
          model.encoder().backward(model.head().backward(l.grad));
          loss = l.scalar;
          break;
        }
        case FinetuneLoss::kIi: {
          const auto l = ii_loss(z, batch->labels);
          model.encoder().backward(l.loss.grad);
          loss = l.loss.scalar;
          break;
        }
        case FinetuneLoss::kTriplet: {
          const auto l = triplet_loss(z, batch->labels, static_cast<float>(cfg.margin));
          model.encoder().backward(l.grad);
          loss = l.scalar;
          break;
        }
      }
      model.step();
      loss_sum += loss;
      ++steps;
      if (cfg.max_steps_per_epoch && steps >= cfg.max_steps_per_epoch) break;
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(std::max<std::size_t>(steps, 1)), 0.0,
                    seconds_since(t_epoch)};
    result.history.push_back(rec);
    log_epoch(cfg, to_string(cfg.finetune_loss).c_str(), rec);
  }
  result.seconds = seconds_since(t_start);
  auto meta = train_metadata(split, cfg);
  meta["init"] = init ? to_string(cfg.pretrain_method) : "none";
  result.checkpoint = model.to_checkpoint(nn::Stage::kFinetuned, std::move(meta));
  return result;
}

Encoded encode_subset(nn::Model& model, const OpenSetSplit& split, Subset subset, std::size_t chunk) {
  const std::size_t n = subset == Subset::kTrain ? split.train_size() : split.test_size();
  const std::size_t d = model.spec().encoder.repr_dim;
  Encoded out;
  out.z = Tensorf({n, d});
  const bool head = model.has_head();
  const std::size_t k = head ? model.spec().head->output_dim : 0;
  if (head) out.logits = Tensorf({n, k});
  std::vector<std::size_t> idx;
  for (std::size_t first = 0; first < n; first += chunk) {
    const std::size_t count = std::min(chunk, n - first);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), first);
    const auto batch = prepare_batch(split, subset, idx);
    const auto z = model.encoder().forward(batch.pixels, false);
    std::copy(z.data.begin(), z.data.end(), out.z.data.begin() + static_cast<std::ptrdiff_t>(first * d));
    if (head) {
      const auto logits = model.head().forward(z, false);
      std::copy(logits.data.begin(), logits.data.end(),
                out.logits.data.begin() + static_cast<std::ptrdiff_t>(first * k));
    }
  }
  return out;
}

PrototypeSet prototypes_from(const Tensorf& z, std::span<const int> labels, int num_classes,
                             double contamination) {
  require_shape(z.rank() == 2 && z.dim(0) == labels.size(), "prototypes: representation/label mismatch");
  const std::size_t d = z.dim(1);
  PrototypeSet protos;
  protos.contamination = contamination;
  protos.mu = Tensord({static_cast<std::size_t>(num_classes), d});
  std::vector<std::size_t> count(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const auto c = static_cast<std::size_t>(labels[j]);
    ++count[c];
    for (std::size_t k = 0; k < d; ++k) protos.mu.at(c, k) += z.at(j, k);
  }
  for (std::size_t c = 0; c < count.size(); ++c) {
    if (count[c] == 0) throw DomainError("known class " + std::to_string(c) + " has no training samples");
    for (std::size_t k = 0; k < d; ++k) protos.mu.at(c, k) /= static_cast<double>(count[c]);
  }
  std::vector<double> scores(labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j) scores[j] = outlier_score(z.row(j), protos);
  protos.threshold = percentile_threshold(std::move(scores), contamination);
  return protos;
}

PrototypeSet compute_prototypes(const nn::ModelCheckpoint& ckpt, const OpenSetSplit& split,
                                double contamination) {
  if (ckpt.stage != nn::Stage::kFinetuned) throw ConfigError("prototypes need a fine-tuned checkpoint");
  auto model = nn::Model::from_checkpoint(ckpt);
  const auto enc = encode_subset(model, split, Subset::kTrain);
  return prototypes_from(enc.z, split.train_labels, split.num_known(), contamination);
}

}  // namespace dtae
