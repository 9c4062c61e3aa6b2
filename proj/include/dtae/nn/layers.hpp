#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dtae/tensor.hpp"

namespace dtae::nn {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  enum class Init { kHe, kZero, kOne };
  Init init = Init::kZero;
  std::size_t fan_in = 0;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* tensor;
};

// A differentiable layer. forward() records whatever backward() needs;
// backward() accumulates parameter gradients and returns the input gradient.
// Tensors are taken by value so elementwise layers can work in place.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Tensor<T> forward(Tensor<T> x, bool training) = 0;
  virtual Tensor<T> backward(Tensor<T> dy) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }
  virtual std::vector<NamedBuffer<T>> buffers() { return {}; }
  virtual void reseed(std::uint64_t) {}

  // The first layer of a network never needs dL/dx; skipping it saves a GEMM.
  bool needs_input_grad = true;
};

template <typename T>
using LayerPtr = std::unique_ptr<Layer<T>>;

// 2-D convolution, NHWC, stride 1, "same" zero padding.
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel = 3);
  std::string kind() const override { return "conv2d"; }
  Tensor<T> forward(Tensor<T> x, bool training) override;
  Tensor<T> backward(Tensor<T> dy) override;
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

 private:
  std::size_t in_c_, out_c_, k_;
  Param<T> weight_;  // [k*k*in, out]
  Param<T> bias_;
  Tensor<T> input_;
  std::vector<T> col_;
};

// Transposed convolution with stride 2 doubling the spatial size ("same"-style
// output), the inverse shape map of Conv2d followed by MaxPool2d.
template <typename T>
class ConvTranspose2d final : public Layer<T> {
 public:
  ConvTranspose2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel = 3,
                  std::size_t stride = 2);
  std::string kind() const override { return "conv_transpose2d"; }
  Tensor<T> forward(Tensor<T> x, bool training) override;
  Tensor<T> backward(Tensor<T> dy) override;
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

 private:
  std::size_t in_c_, out_c_, k_, stride_;
  Param<T> weight_;  // [in, k*k*out]
  Param<T> bias_;
  Tensor<T> input_;
  std::vector<T> col_;
};

// Max pooling with "same" padding: out = ceil(in / stride). Padded cells never win.
template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  MaxPool2d(std::size_t kernel = 3, std::size_t stride = 2) : k_(kernel), stride_(stride) {}
  std::string kind() const override { return "maxpool2d"; }
  Tensor<T> forward(Tensor<T> x, bool training) override;
  Tensor<T> backward(Tensor<T> dy) override;

 private:
  std::size_t k_, stride_;
  Shape in_shape_;
  std::vector<std::uint32_t> argmax_;
};

template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(std::size_t in_features, std::size_t out_features);
  std::string kind() const override { return "dense"; }
  Tensor<T> forward(Tensor<T> x, bool training) override;
  Tensor<T> backward(Tensor<T> dy) override;
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

 private:
  std::size_t in_, out_;
  Param<T> weight_;  // [in, out]
  Param<T> bias_;
  Tensor<T> input_;
};

// Normalizes over every axis but the last. Batch statistics while training,
// running statistics otherwise.
template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  explicit BatchNorm(std::size_t channels, T momentum = T(0.9), T eps = T(1e-5));
  std::string kind() const override { return "batchnorm"; }
  Tensor<T> forward(Tensor<T> x, bool training) override;
  Tensor<T> backward(Tensor<T> dy) override;
  std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }
  std::vector<NamedBuffer<T>> buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }

 private:
  std::size_t c_;
  T momentum_, eps_;
  Param<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool trained_pass_ = false;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  Tensor<T> forward(Tensor<T> x, bool training) override;
  Tensor<T> backward(Tensor<T> dy) override;

 private:
  std::vector<std::uint8_t> active_;
  bool has_forward_ = false;
};

template <typename T>
class Sigmoid final : public Layer<T> {
 public:
  std::string kind() const override { return "sigmoid"; }
  Tensor<T> forward(Tensor<T> x, bool training) override;
  Tensor<T> backward(Tensor<T> dy) override;

 private:
  Tensor<T> output_;
};

// Inverted dropout: units survive with probability keep and are scaled by 1/keep.
// Identity outside training.
template <typename T>
class Dropout final : public Layer<T> {
 public:
  explicit Dropout(double keep) : keep_(keep) {}
  std::string kind() const override { return "dropout"; }
  Tensor<T> forward(Tensor<T> x, bool training) override;
  Tensor<T> backward(Tensor<T> dy) override;
  void reseed(std::uint64_t seed) override { rng_.seed(seed); }

 private:
  double keep_;
  std::mt19937_64 rng_{0};
  std::vector<T> mask_;
  bool has_forward_ = false;
};

// Reshapes [N, ...] to [N, target...]; data layout is untouched.
template <typename T>
class Reshape final : public Layer<T> {
 public:
  explicit Reshape(Shape target) : target_(std::move(target)) {}
  std::string kind() const override { return "reshape"; }
  Tensor<T> forward(Tensor<T> x, bool training) override;
  Tensor<T> backward(Tensor<T> dy) override;

 private:
  Shape target_;
  Shape in_shape_;
};

// Ordered stack of layers with hierarchical parameter names "<prefix>.<index>.<param>".
template <typename T>
class Sequential {
 public:
  explicit Sequential(std::string prefix = "") : prefix_(std::move(prefix)) {}

  Layer<T>& add(LayerPtr<T> layer);
  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto p = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *p;
    add(std::move(p));
    return ref;
  }

  Tensor<T> forward(Tensor<T> x, bool training);
  Tensor<T> backward(Tensor<T> dy);

  std::vector<Param<T>*> params();
  std::vector<NamedBuffer<T>> buffers();
  void zero_grad();
  // He-normal weights (std = sqrt(2/fan_in)), zero biases, unit BN scales;
  // also seeds every dropout layer. Deterministic per seed.
  void init(std::uint64_t seed);

  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  const std::string& prefix() const { return prefix_; }

 private:
  std::string prefix_;
  std::vector<LayerPtr<T>> layers_;
  bool forwarded_ = false;
};

}  // namespace dtae::nn
