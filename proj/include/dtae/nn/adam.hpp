#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "dtae/nn/layers.hpp"

namespace dtae::nn {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are keyed by parameter name so
// they survive a checkpoint round trip.
template <typename T>
class Adam {
 public:
  struct Moments {
    Tensor<T> m;
    Tensor<T> v;
  };

  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(std::span<Param<T>* const> params);

  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  AdamConfig cfg_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace dtae::nn
