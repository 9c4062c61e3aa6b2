#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtae/nn/adam.hpp"
#include "dtae/nn/network.hpp"

namespace dtae::nn {

// Which parts a model carries. Pre-training uses encoder + decoder (DTAE) or
// encoder + rotation head (RotNet); fine-tuning uses the encoder plus, for
// cross-entropy, a C-way classification head.
struct ModelSpec {
  EncoderConfig encoder;
  bool has_decoder = false;
  std::optional<HeadConfig> head;
  bool operator==(const ModelSpec&) const = default;
};

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

enum class Stage { kPretrained, kFinetuned };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

// Named tensors plus everything needed to rebuild the model around them.
struct ModelCheckpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  Stage stage = Stage::kPretrained;
  ModelSpec spec;
  std::uint64_t adam_steps = 0;
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, Tensorf> tensors;

  // Hash of the architecture description; init checkpoints must match it.
  std::string encoder_fingerprint() const;
  std::map<std::string, Tensorf> with_prefix(const std::string& prefix) const;

  // Binary container: 8-byte magic, u32 version, u64 header length, JSON
  // header (spec, stage, fingerprint, tensor directory), then raw
  // little-endian float32 payloads in directory order.
  void save(const std::filesystem::path& path) const;
  static ModelCheckpoint load(const std::filesystem::path& path);
};

std::string fingerprint(const EncoderConfig& cfg);

class Model {
 public:
  Model(const ModelSpec& spec, std::uint64_t seed, AdamConfig adam = {});

  const ModelSpec& spec() const { return spec_; }
  Sequential<float>& encoder() { return encoder_; }
  Sequential<float>& decoder();
  Sequential<float>& head();
  bool has_decoder() const { return decoder_.has_value(); }
  bool has_head() const { return head_.has_value(); }
  Adam<float>& optimizer() { return adam_; }

  std::vector<Param<float>*> params();
  std::vector<NamedBuffer<float>> buffers();
  void zero_grad();
  void step() { auto p = params(); adam_.step(p); }

  // Representations of a large set in inference mode, chunked to bound memory.
  Tensorf encode_all(const Tensorf& pixels, std::size_t chunk = 256);

  ModelCheckpoint to_checkpoint(Stage stage, nlohmann::json metadata = nlohmann::json::object());
  static Model from_checkpoint(const ModelCheckpoint& ckpt);
  // Copies encoder weights and BN statistics from a checkpoint; optimizer state is not carried.
  void load_encoder_from(const ModelCheckpoint& ckpt);

 private:
  ModelSpec spec_;
  Sequential<float> encoder_;
  std::optional<Sequential<float>> decoder_;
  std::optional<Sequential<float>> head_;
  Adam<float> adam_;
};

// FNV-1a over a byte sequence, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace dtae::nn
