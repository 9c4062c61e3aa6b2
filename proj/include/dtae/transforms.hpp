#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dtae/dataio.hpp"
#include "dtae/tensor.hpp"

namespace dtae {

inline constexpr int kNumRotations = 4;

// Counter-clockwise rotation of a square side×side image by 90·t degrees.
// out[i][j] = in[j][side-1-i] for a single quarter turn.
template <typename T>
std::vector<T> rotate90(std::span<const T> image, std::size_t side, int t);

// Same, for a non-square (rows × cols) input: rejects it.
template <typename T>
std::vector<T> rotate90(std::span<const T> image, std::size_t rows, std::size_t cols, int t);

// The M=4 rotated views of every image, origin-major: row i*4 + t holds
// rotate90(image_i, t).
struct TransformedBatch {
  Tensorf pixels;
  std::vector<int> transform_ids;
  std::vector<std::size_t> origin_index;
  std::size_t size() const { return transform_ids.size(); }
};

TransformedBatch expand_batch(const ImageBatch& batch);

}  // namespace dtae
