#include <doctest.h>

#include "dtae/train.hpp"
#include "synthetic.hpp"

using namespace dtae;

namespace {

const OpenSetSplit& split() {
  static const OpenSetSplit s =
      make_open_set_split(testing::synthetic_dataset(20, 31), testing::synthetic_dataset(6, 32), 6, 4);
  return s;
}

TrainConfig quick(PretrainMethod m, FinetuneLoss l, std::size_t steps = 2) {
  TrainConfig c;
  c.pretrain_method = m;
  c.finetune_loss = l;
  c.batch_size = 16;
  c.pretrain_epochs = 1;
  c.finetune_epochs = 1;
  c.max_steps_per_epoch = steps;
  c.seed = 77;
  return c;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("config validation and names") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.finetune_epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.lr = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(pretrain_method_from_string(to_string(PretrainMethod::kRotNet)) == PretrainMethod::kRotNet);
    CHECK(finetune_loss_from_string("triplet") == FinetuneLoss::kTriplet);
    CHECK_THROWS_AS(finetune_loss_from_string("mse"), ConfigError);
  }

  TEST_CASE("dtae pre-training") {
    const auto r = pretrain(split(), quick(PretrainMethod::kDtae, FinetuneLoss::kCrossEntropy));
    CHECK(r.checkpoint.stage == nn::Stage::kPretrained);
    CHECK(r.checkpoint.spec.has_decoder);
    CHECK(!r.checkpoint.spec.head);
    CHECK(r.checkpoint.adam_steps == 2);
    REQUIRE(r.history.size() == 1);
    // raw is the per-batch Eq.2 sum, loss its batch mean over 16 originals.
    CHECK(r.history[0].raw == doctest::Approx(16 * r.history[0].loss));
    CHECK(r.checkpoint.metadata.at("known_classes") == split().known_classes);
  }

  TEST_CASE("rotnet pre-training carries a 4-way head") {
    const auto r = pretrain(split(), quick(PretrainMethod::kRotNet, FinetuneLoss::kCrossEntropy));
    REQUIRE(r.checkpoint.spec.head);
    CHECK(r.checkpoint.spec.head->kind == nn::HeadKind::kRotation);
    CHECK(r.checkpoint.tensors.at("head.0.weight").shape == Shape{6, 4});
    CHECK_THROWS_AS(pretrain(split(), quick(PretrainMethod::kNone, FinetuneLoss::kCrossEntropy)), ConfigError);
  }

  TEST_CASE("fine-tuning with each loss") {
    for (auto loss : {FinetuneLoss::kCrossEntropy, FinetuneLoss::kIi, FinetuneLoss::kTriplet}) {
      CAPTURE(to_string(loss));
      const auto r = finetune(split(), quick(PretrainMethod::kNone, loss));
      CHECK(r.checkpoint.stage == nn::Stage::kFinetuned);
      CHECK(r.checkpoint.spec.head.has_value() == (loss == FinetuneLoss::kCrossEntropy));
      CHECK(!r.checkpoint.spec.has_decoder);
      CHECK(std::isfinite(r.history.at(0).loss));
      CHECK(r.checkpoint.metadata.at("init") == "none");
    }
  }

  TEST_CASE("cross-entropy loss falls on a learnable task") {
    auto cfg = quick(PretrainMethod::kNone, FinetuneLoss::kCrossEntropy, 0);
    cfg.finetune_epochs = 4;
    cfg.dropout_keep = 0.8;
    const auto r = finetune(split(), cfg);
    CHECK(r.history.back().loss < r.history.front().loss);
  }

  TEST_CASE("pre-trained initialization is used and deterministic") {
    const auto cfg = quick(PretrainMethod::kDtae, FinetuneLoss::kCrossEntropy);
    const auto pre = pretrain(split(), cfg);
    const auto a = finetune(split(), cfg, &pre.checkpoint);
    const auto b = finetune(split(), cfg, &pre.checkpoint);
    const auto fresh = finetune(split(), cfg);
    CHECK(a.checkpoint.tensors == b.checkpoint.tensors);
    CHECK(a.checkpoint.tensors.at("encoder.0.weight") != fresh.checkpoint.tensors.at("encoder.0.weight"));
    CHECK(a.checkpoint.metadata.at("init") == "dtae");

    auto other = cfg;
    other.dropout_keep = 0.5;
    CHECK_THROWS_AS(finetune(split(), other, &pre.checkpoint), ConfigError);
  }

  TEST_CASE("prototypes are class means of the training representations") {
    const auto r = finetune(split(), quick(PretrainMethod::kNone, FinetuneLoss::kIi));
    const auto protos = compute_prototypes(r.checkpoint, split());
    auto model = nn::Model::from_checkpoint(r.checkpoint);
    const auto enc = encode_subset(model, split(), Subset::kTrain, 7);
    CHECK(protos.num_classes() == 6);
    for (int c = 0; c < 6; ++c) {
      double sum = 0;
      std::size_t n = 0;
      for (std::size_t j = 0; j < split().train_size(); ++j)
        if (split().train_labels[j] == c) {
          sum += enc.z.at(j, 0);
          ++n;
        }
      CHECK(protos.mu.at(static_cast<std::size_t>(c), 0) == doctest::Approx(sum / n).epsilon(1e-6));
    }
    CHECK(protos.contamination == 0.01);
    CHECK_THROWS_AS(compute_prototypes(pretrain(split(), quick(PretrainMethod::kDtae, FinetuneLoss::kIi)).checkpoint, split()),
                    ConfigError);
  }

  TEST_CASE("encoding is chunk independent") {
    const auto r = finetune(split(), quick(PretrainMethod::kNone, FinetuneLoss::kCrossEntropy));
    auto model = nn::Model::from_checkpoint(r.checkpoint);
    const auto a = encode_subset(model, split(), Subset::kTest, 5);
    const auto b = encode_subset(model, split(), Subset::kTest, 512);
    // GEMM blocking may differ with the chunk size, so compare up to rounding.
    REQUIRE(a.z.shape == b.z.shape);
    for (std::size_t i = 0; i < a.z.size(); ++i) CHECK(a.z[i] == doctest::Approx(b.z[i]).epsilon(1e-5));
    CHECK(a.logits.shape == Shape{split().test_size(), 6});
  }
}
