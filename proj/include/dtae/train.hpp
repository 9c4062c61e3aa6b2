#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dtae/dataio.hpp"
#include "dtae/nn/model.hpp"
#include "dtae/osr.hpp"

namespace dtae {

enum class PretrainMethod { kNone, kRotNet, kDtae };
enum class FinetuneLoss { kCrossEntropy, kIi, kTriplet };

std::string to_string(PretrainMethod m);
std::string to_string(FinetuneLoss l);
PretrainMethod pretrain_method_from_string(const std::string& s);
FinetuneLoss finetune_loss_from_string(const std::string& s);

struct TrainConfig {
  PretrainMethod pretrain_method = PretrainMethod::kDtae;
  FinetuneLoss finetune_loss = FinetuneLoss::kCrossEntropy;
  std::size_t pretrain_epochs = 1;
  std::size_t finetune_epochs = 3;
  std::size_t batch_size = 128;
  double lr = 0.001;
  double margin = 0.2;
  double dropout_keep = 0.2;
  bool use_batchnorm = true;
  std::uint64_t seed = 0;
  // Stop an epoch after this many optimizer steps (0 = full pass). Used by tests.
  std::size_t max_steps_per_epoch = 0;
  // Receives one line per epoch when set.
  std::function<void(const std::string&)> log;

  void validate() const;
};

nn::EncoderConfig encoder_config_for(const OpenSetSplit& split, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;   // mean of the optimizer-facing loss over the epoch's batches
  double raw = 0.0;    // DTAE only: mean raw (un-normalized) objective per batch
  double seconds = 0.0;
};

struct TrainResult {
  nn::ModelCheckpoint checkpoint;
  std::vector<EpochRecord> history;
  double seconds = 0.0;
};

TrainResult pretrain(const OpenSetSplit& split, const TrainConfig& cfg);
TrainResult finetune(const OpenSetSplit& split, const TrainConfig& cfg,
                     const nn::ModelCheckpoint* init = nullptr);

// Inference-mode representations (and head logits, when the model has a
// classification head) of a whole subset.
struct Encoded {
  Tensorf z;
  Tensorf logits;  // empty without a head
};
Encoded encode_subset(nn::Model& model, const OpenSetSplit& split, Subset subset,
                      std::size_t chunk = 512);

// Class means of the training representations and the (1 − contamination)
// nearest-rank percentile of the training outlier scores.
PrototypeSet compute_prototypes(const nn::ModelCheckpoint& ckpt, const OpenSetSplit& split,
                                double contamination = 0.01);
PrototypeSet prototypes_from(const Tensorf& z, std::span<const int> labels, int num_classes,
                             double contamination);

}  // namespace dtae
