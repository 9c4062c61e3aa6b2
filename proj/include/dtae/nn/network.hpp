#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtae/nn/layers.hpp"

namespace dtae::nn {

inline constexpr std::size_t kReprDim = 6;

struct EncoderConfig {
  std::size_t input_size = 32;  // 32 for (Fashion-)MNIST, 36 for CIFAR-10
  std::vector<std::size_t> conv_channels{32, 64};
  std::size_t kernel = 3;
  std::size_t pool_kernel = 3;
  std::size_t pool_stride = 2;
  std::vector<std::size_t> dense_units{256, 128};
  std::size_t repr_dim = kReprDim;
  double dropout_keep = 0.2;
  bool use_batchnorm = true;

  // Spatial side after the conv/pool stack (32 -> 8, 36 -> 9).
  std::size_t bottleneck_side() const;
  std::size_t flat_features() const;
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// The decoder mirrors the encoder: dense [128, 256, flat], reshape, then one
// stride-2 transposed convolution per pool ending in a single sigmoid channel.
struct DecoderConfig {
  EncoderConfig encoder;
  bool operator==(const DecoderConfig&) const = default;
};

enum class HeadKind { kClassification, kRotation };

struct HeadConfig {
  HeadKind kind = HeadKind::kClassification;
  std::size_t input_dim = kReprDim;
  std::size_t output_dim = 6;
  void validate() const;
  bool operator==(const HeadConfig&) const = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const HeadConfig& c);
void from_json(const nlohmann::json& j, HeadConfig& c);

template <typename T>
Sequential<T> build_encoder(const EncoderConfig& cfg);
template <typename T>
Sequential<T> build_decoder(const DecoderConfig& cfg);
template <typename T>
Sequential<T> build_head(const HeadConfig& cfg);

// Number of trainable scalars (weights, biases, BN scale/shift).
template <typename T>
std::size_t parameter_count(Sequential<T>& net);

}  // namespace dtae::nn
