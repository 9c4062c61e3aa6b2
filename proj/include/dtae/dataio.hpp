#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtae/tensor.hpp"

namespace dtae {

inline constexpr int kNumSourceClasses = 10;

// Images as decoded from disk: N × H × W × channels bytes, interleaved HWC.
struct RawDataset {
  std::string name;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_bytes() const { return height * width * channels; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * image_bytes(), image_bytes()};
  }
};

struct DatasetPair {
  std::shared_ptr<const RawDataset> train;
  std::shared_ptr<const RawDataset> test;
};

RawDataset load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path);

// One CIFAR-10 binary batch: records of 1 label byte + 3072 channel-planar pixel bytes.
RawDataset load_cifar10_batch(const std::filesystem::path& path);
// All six canonical batch files of a CIFAR-10 directory (kept in colour).
DatasetPair load_cifar10(const std::filesystem::path& dir);

// BT.601 luma, rounded and clamped to [0, 255].
std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b);
std::vector<std::uint8_t> to_grayscale(std::span<const std::uint8_t> rgb);
RawDataset to_grayscale(const RawDataset& rgb);

// Loads mnist / fashion_mnist (IDX files) or cifar10 (converted to grayscale)
// from root/<dataset>/.
DatasetPair load_dataset(const std::string& dataset, const std::filesystem::path& root);

// Optional deterministic subsampling, used for smoke runs. Zero means "keep all".
struct SplitLimits {
  std::size_t max_train = 0;
  std::size_t max_test = 0;
};

struct OpenSetSplit {
  std::vector<int> known_classes;           // ascending original ids
  std::array<int, kNumSourceClasses> label_map{};  // original id -> dense id, -1 if unknown
  std::shared_ptr<const RawDataset> train_source;
  std::shared_ptr<const RawDataset> test_source;
  std::vector<std::size_t> train_indices;   // into train_source
  std::vector<int> train_labels;            // dense 0..C-1
  std::vector<std::size_t> test_indices;    // into test_source
  std::vector<int> test_labels;             // dense, unknown = C
  std::uint64_t seed = 0;

  int num_known() const { return static_cast<int>(known_classes.size()); }
  int unknown_label() const { return num_known(); }
  std::size_t train_size() const { return train_indices.size(); }
  std::size_t test_size() const { return test_indices.size(); }
};

OpenSetSplit make_open_set_split(std::shared_ptr<const RawDataset> ds_train,
                                 std::shared_ptr<const RawDataset> ds_test, int num_known,
                                 std::uint64_t seed, SplitLimits limits = {});

// Normalized, zero-padded grayscale images with their dense labels.
struct ImageBatch {
  Tensorf pixels;  // N × Hp × Wp × 1
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

enum class Subset { kTrain, kTest };

// 28 -> 32, 32 -> 36: two zero pixels on every side.
inline constexpr std::size_t kPadding = 2;
std::size_t padded_size(const RawDataset& ds);

ImageBatch prepare_batch(const OpenSetSplit& split, Subset subset,
                         std::span<const std::size_t> indices);
// Every sample of a subset, in order.
ImageBatch prepare_all(const OpenSetSplit& split, Subset subset);

// Deterministic shuffled pass over n positions in chunks of batch_size.
std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch_size,
                                                       std::uint64_t epoch_seed);
// Class-proportional interleaving so every full batch mixes classes. A short
// tail is merged into the previous batch.
std::vector<std::vector<std::size_t>> stratified_batches(std::span<const int> labels,
                                                         std::size_t batch_size,
                                                         std::uint64_t epoch_seed);

// Single-consumer pass over the training subset.
class BatchIterator {
 public:
  BatchIterator(const OpenSetSplit& split, std::size_t batch_size, std::uint64_t epoch_seed,
                bool stratified = false);
  std::optional<ImageBatch> next();
  const std::vector<std::vector<std::size_t>>& plan() const { return plan_; }

 private:
  const OpenSetSplit* split_;
  std::vector<std::vector<std::size_t>> plan_;
  std::size_t cursor_ = 0;
};

}  // namespace dtae
