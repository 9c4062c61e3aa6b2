#include "dtae/transforms.hpp"

#include <algorithm>
#include <string>

namespace dtae {

template <typename T>
std::vector<T> rotate90(std::span<const T> image, std::size_t side, int t) {
  if (image.size() != side * side) throw ShapeError("rotate90 expects a square image");
  if (t < 0 || t >= kNumRotations) throw DomainError("rotation index must be in 0..3");
  std::vector<T> cur(image.begin(), image.end());
  std::vector<T> next(cur.size());
  for (int k = 0; k < t; ++k) {
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j) next[i * side + j] = cur[j * side + (side - 1 - i)];
    std::swap(cur, next);
  }
  return cur;
}

template <typename T>
std::vector<T> rotate90(std::span<const T> image, std::size_t rows, std::size_t cols, int t) {
  if (rows != cols)
    throw ShapeError("rotate90 expects a square image, got " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  return rotate90(image, rows, t);
}

template std::vector<float> rotate90(std::span<const float>, std::size_t, int);
template std::vector<double> rotate90(std::span<const double>, std::size_t, int);
template std::vector<float> rotate90(std::span<const float>, std::size_t, std::size_t, int);
template std::vector<double> rotate90(std::span<const double>, std::size_t, std::size_t, int);

TransformedBatch expand_batch(const ImageBatch& batch) {
  const auto& px = batch.pixels;
  require_shape(px.rank() == 4 && px.dim(3) == 1, "expand_batch expects N×H×W×1 pixels");
  const std::size_t n = px.dim(0), h = px.dim(1), w = px.dim(2);
  if (n == 0) throw DomainError("expand_batch on empty batch");

  TransformedBatch out;
  out.pixels = Tensorf({n * kNumRotations, h, w, 1});
  out.transform_ids.reserve(n * kNumRotations);
  out.origin_index.reserve(n * kNumRotations);
  const std::size_t plane = h * w;
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const float> src(px.ptr() + i * plane, plane);
    for (int t = 0; t < kNumRotations; ++t) {
      const auto rotated = rotate90(src, h, w, t);
      std::copy(rotated.begin(), rotated.end(),
                out.pixels.ptr() + (i * kNumRotations + static_cast<std::size_t>(t)) * plane);
      out.transform_ids.push_back(t);
      out.origin_index.push_back(i);
    }
  }
  return out;
}

}  // namespace dtae
