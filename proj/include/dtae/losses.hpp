#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dtae/tensor.hpp"

namespace dtae {

// A scalar objective with optional per-sample terms and the gradient of the
// scalar with respect to the loss input (reconstructions, logits or
// representations).
template <typename T>
struct LossValue {
  T scalar = T(0);
  std::vector<T> per_sample;
  Tensor<T> grad;
};

template <typename T>
struct DtaeLoss {
  T raw = T(0);          // 1/2 · Σ_t Σ_i ‖x_i − r_it‖²
  LossValue<T> mean;     // raw / N, the value the optimizer descends
};

// originals: N×H×W×1; reconstructions: 4N×H×W×1 where row k reconstructs
// originals[origin_index[k]].
template <typename T>
DtaeLoss<T> dtae_loss(const Tensor<T>& originals, const Tensor<T>& reconstructions,
                      std::span<const std::size_t> origin_index);

// Batch mean of −log softmax(logits)[label], log-sum-exp stabilized.
template <typename T>
LossValue<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

template <typename T>
LossValue<T> rotnet_loss(const Tensor<T>& logits, std::span<const int> transform_ids) {
  return cross_entropy(logits, transform_ids);
}

template <typename T>
struct IiLoss {
  T intra_spread = T(0);
  T inter_separation = T(0);
  LossValue<T> loss;  // intra_spread − inter_separation
};

// intra_spread = (1/N) Σ_j ‖z_j − μ_{c_j}‖² over batch class means;
// inter_separation = min over class pairs of ‖μ_m − μ_n‖².
template <typename T>
IiLoss<T> ii_loss(const Tensor<T>& z, std::span<const int> labels);

// Batch-all mining: mean of max(0, ‖a−p‖² − ‖a−n‖² + margin) over the
// triplets with a positive value; zero when none is active.
template <typename T>
LossValue<T> triplet_loss(const Tensor<T>& z, std::span<const int> labels, T margin);

}  // namespace dtae
