#include "dtae/nn/network.hpp"

#include <algorithm>

namespace dtae::nn {

std::size_t EncoderConfig::bottleneck_side() const {
  std::size_t side = input_size;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) side = (side + pool_stride - 1) / pool_stride;
  return side;
}

std::size_t EncoderConfig::flat_features() const {
  return bottleneck_side() * bottleneck_side() * conv_channels.back();
}

void EncoderConfig::validate() const {
  if (input_size != 32 && input_size != 36)
    throw ConfigError("encoder input size must be 32 or 36, got " + std::to_string(input_size));
  if (conv_channels.empty() || dense_units.empty()) throw ConfigError("encoder needs conv and dense stages");
  if (repr_dim == 0) throw ConfigError("representation dimension must be positive");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0))
    throw ConfigError("dropout keep probability must lie in (0, 1]");
  if (pool_stride != 2) throw ConfigError("the decoder mirror assumes pool stride 2");
  // The transposed convolutions double the side, so the pools must halve it exactly.
  std::size_t side = input_size;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    if (side % 2 != 0) throw ConfigError("input size must halve exactly at every pool");
    side /= 2;
  }
}

void HeadConfig::validate() const {
  if (kind == HeadKind::kRotation && output_dim != 4)
    throw ConfigError("rotation head must have exactly 4 outputs");
  if (output_dim < 2) throw ConfigError("head needs at least 2 outputs");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"input_size", c.input_size},   {"conv_channels", c.conv_channels},
       {"kernel", c.kernel},           {"pool_kernel", c.pool_kernel},
       {"pool_stride", c.pool_stride}, {"dense_units", c.dense_units},
       {"repr_dim", c.repr_dim},       {"dropout_keep", c.dropout_keep},
       {"use_batchnorm", c.use_batchnorm}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  j.at("input_size").get_to(c.input_size);
  j.at("conv_channels").get_to(c.conv_channels);
  j.at("kernel").get_to(c.kernel);
  j.at("pool_kernel").get_to(c.pool_kernel);
  j.at("pool_stride").get_to(c.pool_stride);
  j.at("dense_units").get_to(c.dense_units);
  j.at("repr_dim").get_to(c.repr_dim);
  j.at("dropout_keep").get_to(c.dropout_keep);
  j.at("use_batchnorm").get_to(c.use_batchnorm);
}

void to_json(nlohmann::json& j, const HeadConfig& c) {
  j = {{"kind", c.kind == HeadKind::kRotation ? "rotation" : "classification"},
       {"input_dim", c.input_dim},
       {"output_dim", c.output_dim}};
}

void from_json(const nlohmann::json& j, HeadConfig& c) {
  c.kind = j.at("kind").get<std::string>() == "rotation" ? HeadKind::kRotation : HeadKind::kClassification;
  j.at("input_dim").get_to(c.input_dim);
  j.at("output_dim").get_to(c.output_dim);
}

template <typename T>
Sequential<T> build_encoder(const EncoderConfig& cfg) {
  cfg.validate();
  Sequential<T> net("encoder");
  std::size_t channels = 1;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    auto& conv = net.template emplace<Conv2d<T>>(channels, cfg.conv_channels[i], cfg.kernel);
    if (i == 0) conv.needs_input_grad = false;
    if (cfg.use_batchnorm) net.template emplace<BatchNorm<T>>(cfg.conv_channels[i]);
    net.template emplace<ReLU<T>>();
    net.template emplace<MaxPool2d<T>>(cfg.pool_kernel, cfg.pool_stride);
    channels = cfg.conv_channels[i];
  }
  net.template emplace<Reshape<T>>(Shape{cfg.flat_features()});
  std::size_t width = cfg.flat_features();
  for (auto units : cfg.dense_units) {
    net.template emplace<Dense<T>>(width, units);
    if (cfg.use_batchnorm) net.template emplace<BatchNorm<T>>(units);
    net.template emplace<ReLU<T>>();
    net.template emplace<Dropout<T>>(cfg.dropout_keep);
    width = units;
  }
  net.template emplace<Dense<T>>(width, cfg.repr_dim);
  return net;
}

template <typename T>
Sequential<T> build_decoder(const DecoderConfig& dcfg) {
  const auto& cfg = dcfg.encoder;
  cfg.validate();
  Sequential<T> net("decoder");
  std::size_t width = cfg.repr_dim;
  std::vector<std::size_t> units(cfg.dense_units.rbegin(), cfg.dense_units.rend());
  units.push_back(cfg.flat_features());
  for (auto u : units) {
    net.template emplace<Dense<T>>(width, u);
    if (cfg.use_batchnorm) net.template emplace<BatchNorm<T>>(u);
    net.template emplace<ReLU<T>>();
    width = u;
  }
  const std::size_t side = cfg.bottleneck_side();
  net.template emplace<Reshape<T>>(Shape{side, side, cfg.conv_channels.back()});
  std::vector<std::size_t> channels(cfg.conv_channels.rbegin(), cfg.conv_channels.rend());
  channels.push_back(1);
  for (std::size_t i = 0; i + 1 < channels.size(); ++i) {
    net.template emplace<ConvTranspose2d<T>>(channels[i], channels[i + 1], cfg.kernel, cfg.pool_stride);
    const bool last = i + 2 == channels.size();
    if (!last) {
      if (cfg.use_batchnorm) net.template emplace<BatchNorm<T>>(channels[i + 1]);
      net.template emplace<ReLU<T>>();
    }
  }
  net.template emplace<Sigmoid<T>>();
  return net;
}

template <typename T>
Sequential<T> build_head(const HeadConfig& cfg) {
  cfg.validate();
  Sequential<T> net("head");
  net.template emplace<Dense<T>>(cfg.input_dim, cfg.output_dim);
  return net;
}

template <typename T>
std::size_t parameter_count(Sequential<T>& net) {
  std::size_t n = 0;
  for (auto* p : net.params()) n += p->value.size();
  return n;
}

template Sequential<float> build_encoder<float>(const EncoderConfig&);
template Sequential<double> build_encoder<double>(const EncoderConfig&);
template Sequential<float> build_decoder<float>(const DecoderConfig&);
template Sequential<double> build_decoder<double>(const DecoderConfig&);
template Sequential<float> build_head<float>(const HeadConfig&);
template Sequential<double> build_head<double>(const HeadConfig&);
template std::size_t parameter_count<float>(Sequential<float>&);
template std::size_t parameter_count<double>(Sequential<double>&);

}  // namespace dtae::nn
