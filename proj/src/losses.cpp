#include "dtae/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

namespace dtae {

template <typename T>
DtaeLoss<T> dtae_loss(const Tensor<T>& originals, const Tensor<T>& reconstructions,
                      std::span<const std::size_t> origin_index) {
  const std::size_t n = originals.rank() ? originals.dim(0) : 0;
  if (n == 0) throw DomainError("dtae_loss on empty batch");
  if (reconstructions.rank() == 0 || reconstructions.dim(0) != 4 * n || origin_index.size() != 4 * n)
    throw ShapeError("dtae_loss expects 4N reconstructions for N originals");
  const std::size_t per = originals.row_size();
  if (reconstructions.row_size() != per) throw ShapeError("dtae_loss: image sizes differ");

  DtaeLoss<T> out;
  out.mean.grad = Tensor<T>(reconstructions.shape);
  out.mean.per_sample.assign(n, T(0));
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t k = 0; k < reconstructions.dim(0); ++k) {
    const std::size_t i = origin_index[k];
    if (i >= n) throw DomainError("dtae_loss: origin index out of range");
    const T* x = originals.ptr() + i * per;
    const T* r = reconstructions.ptr() + k * per;
    T* g = out.mean.grad.ptr() + k * per;
    T acc = T(0);
    for (std::size_t p = 0; p < per; ++p) {
      const T d = r[p] - x[p];
      acc += d * d;
      g[p] = d * inv_n;
    }
    out.mean.per_sample[i] += T(0.5) * acc;
  }
  for (auto v : out.mean.per_sample) out.raw += v;
  out.mean.scalar = out.raw * inv_n;
  return out;
}

template <typename T>
LossValue<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_shape(logits.rank() == 2 && logits.dim(0) == labels.size(),
                "cross_entropy expects N×K logits and N labels");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (n == 0) throw DomainError("cross_entropy on empty batch");
  LossValue<T> out;
  out.grad = Tensor<T>(logits.shape);
  out.per_sample.resize(n);
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw DomainError("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    const T* row = logits.ptr() + i * k;
    const T mx = *std::max_element(row, row + k);
    T sum = T(0);
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    const T lse = mx + std::log(sum);
    const auto y = static_cast<std::size_t>(labels[i]);
    out.per_sample[i] = lse - row[y];
    out.scalar += out.per_sample[i];
    for (std::size_t j = 0; j < k; ++j)
      out.grad[i * k + j] = (std::exp(row[j] - lse) - (j == y ? T(1) : T(0))) * inv_n;
  }
  out.scalar *= inv_n;
  return out;
}

namespace {

template <typename T>
T squared_distance(const T* a, const T* b, std::size_t d) {
  T s = T(0);
  for (std::size_t i = 0; i < d; ++i) {
    const T diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

}  // namespace

template <typename T>
IiLoss<T> ii_loss(const Tensor<T>& z, std::span<const int> labels) {
  require_shape(z.rank() == 2 && z.dim(0) == labels.size(), "ii_loss expects N×D representations and N labels");
  const std::size_t n = z.dim(0), d = z.dim(1);

  std::map<int, std::size_t> slot;
  for (int l : labels) slot.try_emplace(l, slot.size());
  if (slot.size() < 2) throw DomainError("ii_loss needs at least 2 classes in the batch");
  std::size_t c = 0;
  for (auto& [label, s] : slot) s = c++;

  std::vector<T> mu(c * d, T(0));
  std::vector<std::size_t> count(c, 0);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t s = slot[labels[j]];
    ++count[s];
    for (std::size_t k = 0; k < d; ++k) mu[s * d + k] += z[j * d + k];
  }
  for (std::size_t s = 0; s < c; ++s)
    for (std::size_t k = 0; k < d; ++k) mu[s * d + k] /= static_cast<T>(count[s]);

  IiLoss<T> out;
  out.loss.grad = Tensor<T>(z.shape);
  out.loss.per_sample.resize(n);
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t s = slot[labels[j]];
    const T dist = squared_distance(z.ptr() + j * d, mu.data() + s * d, d);
    out.loss.per_sample[j] = dist;
    out.intra_spread += dist;
    // The class mean's own dependence on z_j contributes Σ (z_k − μ) = 0.
    for (std::size_t k = 0; k < d; ++k) out.loss.grad[j * d + k] = T(2) * inv_n * (z[j * d + k] - mu[s * d + k]);
  }
  out.intra_spread *= inv_n;

  std::size_t best_m = 0, best_n = 1;
  T best = std::numeric_limits<T>::infinity();
  for (std::size_t a = 0; a < c; ++a)
    for (std::size_t b = a + 1; b < c; ++b) {
      const T dist = squared_distance(mu.data() + a * d, mu.data() + b * d, d);
      if (dist < best) {
        best = dist;
        best_m = a;
        best_n = b;
      }
    }
  out.inter_separation = best;
  // −‖μ_m − μ_n‖² pulls members of m and n apart through their means.
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t s = slot[labels[j]];
    if (s != best_m && s != best_n) continue;
    const T sign = s == best_m ? T(1) : T(-1);
    const T scale = T(2) / static_cast<T>(count[s]);
    for (std::size_t k = 0; k < d; ++k)
      out.loss.grad[j * d + k] -= sign * scale * (mu[best_m * d + k] - mu[best_n * d + k]);
  }
  out.loss.scalar = out.intra_spread - out.inter_separation;
  return out;
}

template <typename T>
LossValue<T> triplet_loss(const Tensor<T>& z, std::span<const int> labels, T margin) {
  require_shape(z.rank() == 2 && z.dim(0) == labels.size(),
                "triplet_loss expects N×D representations and N labels");
  const std::size_t n = z.dim(0), d = z.dim(1);
  std::vector<T> dist(n * n, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      dist[i * n + j] = dist[j * n + i] = squared_distance(z.ptr() + i * d, z.ptr() + j * d, d);

  LossValue<T> out;
  out.grad = Tensor<T>(z.shape);
  out.per_sample.assign(n, T(0));
  std::size_t valid = 0, active = 0;
  // Coefficients of the pairwise-distance gradients, accumulated then applied once.
  std::vector<T> coeff(n * n, T(0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (std::size_t q = 0; q < n; ++q) {
        if (labels[q] == labels[a]) continue;
        ++valid;
        const T v = dist[a * n + p] - dist[a * n + q] + margin;
        if (v <= T(0)) continue;
        ++active;
        out.scalar += v;
        out.per_sample[a] += v;
        coeff[a * n + p] += T(1);
        coeff[a * n + q] -= T(1);
      }
    }
  if (valid == 0) throw DomainError("triplet_loss: batch has no valid triplet");
  if (active == 0) return out;
  const T inv = T(1) / static_cast<T>(active);
  out.scalar *= inv;
  for (auto& v : out.per_sample) v *= inv;
  // d‖z_i − z_j‖² = 2(z_i − z_j) for z_i and the negative for z_j.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const T w = coeff[i * n + j];
      if (w == T(0)) continue;
      for (std::size_t k = 0; k < d; ++k) {
        const T g = T(2) * w * inv * (z[i * d + k] - z[j * d + k]);
        out.grad[i * d + k] += g;
        out.grad[j * d + k] -= g;
      }
    }
  return out;
}

template DtaeLoss<float> dtae_loss(const Tensor<float>&, const Tensor<float>&, std::span<const std::size_t>);
template DtaeLoss<double> dtae_loss(const Tensor<double>&, const Tensor<double>&, std::span<const std::size_t>);
template LossValue<float> cross_entropy(const Tensor<float>&, std::span<const int>);
template LossValue<double> cross_entropy(const Tensor<double>&, std::span<const int>);
template IiLoss<float> ii_loss(const Tensor<float>&, std::span<const int>);
template IiLoss<double> ii_loss(const Tensor<double>&, std::span<const int>);
template LossValue<float> triplet_loss(const Tensor<float>&, std::span<const int>, float);
template LossValue<double> triplet_loss(const Tensor<double>&, std::span<const int>, double);

}  // namespace dtae
