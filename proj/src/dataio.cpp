#include "dtae/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "dtae/random.hpp"

namespace dtae {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + kCifarSide * kCifarSide * 3;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > buf.size()) throw FormatError("truncated IDX header in " + path.string());
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

}  // namespace

RawDataset load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  const auto img_magic = read_be32(img, 0, images_path);
  if (img_magic != kIdxImageMagic)
    throw FormatError("bad IDX image magic in " + images_path.string());
  const auto lab_magic = read_be32(lab, 0, labels_path);
  if (lab_magic != kIdxLabelMagic)
    throw FormatError("bad IDX label magic in " + labels_path.string());

  const std::size_t n_img = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t n_lab = read_be32(lab, 4, labels_path);
  if (n_img != n_lab)
    throw FormatError("image/label count mismatch: " + std::to_string(n_img) + " vs " +
                      std::to_string(n_lab));
  if (img.size() < 16 + n_img * rows * cols)
    throw FormatError("truncated IDX image data in " + images_path.string());
  if (lab.size() < 8 + n_lab) throw FormatError("truncated IDX label data in " + labels_path.string());

  RawDataset ds;
  ds.height = rows;
  ds.width = cols;
  ds.channels = 1;
  ds.pixels.assign(img.begin() + 16, img.begin() + 16 + static_cast<std::ptrdiff_t>(n_img * rows * cols));
  ds.labels.assign(lab.begin() + 8, lab.begin() + 8 + static_cast<std::ptrdiff_t>(n_lab));
  for (auto l : ds.labels)
    if (l >= kNumSourceClasses) throw FormatError("label out of range in " + labels_path.string());
  return ds;
}

RawDataset load_cifar10_batch(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  if (buf.size() % kCifarRecord != 0)
    throw FormatError(path.string() + ": length " + std::to_string(buf.size()) +
                      " is not a multiple of " + std::to_string(kCifarRecord));
  const std::size_t n = buf.size() / kCifarRecord;
  const std::size_t plane = kCifarSide * kCifarSide;

  RawDataset ds;
  ds.name = "cifar10";
  ds.height = ds.width = kCifarSide;
  ds.channels = 3;
  ds.labels.resize(n);
  ds.pixels.resize(n * plane * 3);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = buf.data() + i * kCifarRecord;
    if (rec[0] >= kNumSourceClasses) throw FormatError("label out of range in " + path.string());
    ds.labels[i] = rec[0];
    std::uint8_t* out = ds.pixels.data() + i * plane * 3;
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < 3; ++c) out[p * 3 + c] = rec[1 + c * plane + p];
  }
  return ds;
}

namespace {

void append(RawDataset& dst, const RawDataset& src) {
  dst.pixels.insert(dst.pixels.end(), src.pixels.begin(), src.pixels.end());
  dst.labels.insert(dst.labels.end(), src.labels.begin(), src.labels.end());
}

}  // namespace

DatasetPair load_cifar10(const std::filesystem::path& dir) {
  auto require = [&](const std::string& file) {
    auto p = dir / file;
    if (!std::filesystem::exists(p)) throw IoError("missing CIFAR-10 batch file " + p.string());
    return p;
  };
  RawDataset train;
  for (int b = 1; b <= 5; ++b) {
    auto part = load_cifar10_batch(require("data_batch_" + std::to_string(b) + ".bin"));
    if (b == 1) {
      train = std::move(part);
    } else {
      append(train, part);
    }
  }
  auto test = load_cifar10_batch(require("test_batch.bin"));
  return {std::make_shared<const RawDataset>(std::move(train)),
          std::make_shared<const RawDataset>(std::move(test))};
}

std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double y = std::round(0.299 * r + 0.587 * g + 0.114 * b);
  return static_cast<std::uint8_t>(std::clamp(y, 0.0, 255.0));
}

std::vector<std::uint8_t> to_grayscale(std::span<const std::uint8_t> rgb) {
  std::vector<std::uint8_t> gray(rgb.size() / 3);
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = luma(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]);
  return gray;
}

RawDataset to_grayscale(const RawDataset& rgb) {
  if (rgb.channels != 3) throw ShapeError("to_grayscale expects 3 channels");
  RawDataset out;
  out.name = rgb.name;
  out.height = rgb.height;
  out.width = rgb.width;
  out.channels = 1;
  out.labels = rgb.labels;
  out.pixels = to_grayscale(std::span<const std::uint8_t>(rgb.pixels));
  return out;
}

DatasetPair load_dataset(const std::string& dataset, const std::filesystem::path& root) {
  const auto dir = root / dataset;
  if (dataset == "mnist" || dataset == "fashion_mnist") {
    auto train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    auto test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    train.name = test.name = dataset;
    return {std::make_shared<const RawDataset>(std::move(train)),
            std::make_shared<const RawDataset>(std::move(test))};
  }
  if (dataset == "cifar10") {
    auto colour = load_cifar10(dir);
    return {std::make_shared<const RawDataset>(to_grayscale(*colour.train)),
            std::make_shared<const RawDataset>(to_grayscale(*colour.test))};
  }
  throw ConfigError("unknown dataset '" + dataset + "'");
}

namespace {

std::vector<std::size_t> subsample(std::vector<std::size_t> idx, std::size_t limit,
                                   std::uint64_t seed) {
  if (limit == 0 || idx.size() <= limit) return idx;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

OpenSetSplit make_open_set_split(std::shared_ptr<const RawDataset> ds_train,
                                 std::shared_ptr<const RawDataset> ds_test, int num_known,
                                 std::uint64_t seed, SplitLimits limits) {
  if (num_known < 2 || num_known > kNumSourceClasses - 1)
    throw ConfigError("num_known must lie in [2, 9], got " + std::to_string(num_known));
  if (ds_train->image_bytes() != ds_test->image_bytes())
    throw ShapeError("train and test image sizes differ");

  OpenSetSplit split;
  split.seed = seed;
  std::vector<int> classes(kNumSourceClasses);
  std::iota(classes.begin(), classes.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, {1}));
  std::shuffle(classes.begin(), classes.end(), rng);
  split.known_classes.assign(classes.begin(), classes.begin() + num_known);
  std::sort(split.known_classes.begin(), split.known_classes.end());

  split.label_map.fill(-1);
  for (int i = 0; i < num_known; ++i) split.label_map[split.known_classes[i]] = i;

  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < ds_train->size(); ++i)
    if (split.label_map[ds_train->labels[i]] >= 0) train_idx.push_back(i);
  std::vector<std::size_t> test_idx(ds_test->size());
  std::iota(test_idx.begin(), test_idx.end(), 0);

  split.train_indices = subsample(std::move(train_idx), limits.max_train, derive_seed(seed, {2}));
  split.test_indices = subsample(std::move(test_idx), limits.max_test, derive_seed(seed, {3}));
  for (auto i : split.train_indices) split.train_labels.push_back(split.label_map[ds_train->labels[i]]);
  for (auto i : split.test_indices) {
    const int m = split.label_map[ds_test->labels[i]];
    split.test_labels.push_back(m >= 0 ? m : num_known);
  }
  split.train_source = std::move(ds_train);
  split.test_source = std::move(ds_test);
  return split;
}

std::size_t padded_size(const RawDataset& ds) { return ds.height + 2 * kPadding; }

ImageBatch prepare_batch(const OpenSetSplit& split, Subset subset,
                         std::span<const std::size_t> indices) {
  const bool train = subset == Subset::kTrain;
  const RawDataset& src = train ? *split.train_source : *split.test_source;
  const auto& source_idx = train ? split.train_indices : split.test_indices;
  const auto& labels = train ? split.train_labels : split.test_labels;
  if (src.channels != 1) throw ShapeError("prepare_batch expects grayscale images");

  const std::size_t h = src.height, w = src.width;
  const std::size_t hp = h + 2 * kPadding, wp = w + 2 * kPadding;
  ImageBatch batch;
  batch.pixels = Tensorf({indices.size(), hp, wp, 1});
  batch.labels.reserve(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t pos = indices[b];
    if (pos >= source_idx.size())
      throw DomainError("batch index " + std::to_string(pos) + " out of range");
    const auto img = src.image(source_idx[pos]);
    float* out = batch.pixels.ptr() + b * hp * wp;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out[(y + kPadding) * wp + x + kPadding] = static_cast<float>(img[y * w + x]) / 255.0f;
    batch.labels.push_back(labels[pos]);
  }
  return batch;
}

ImageBatch prepare_all(const OpenSetSplit& split, Subset subset) {
  const std::size_t n = subset == Subset::kTrain ? split.train_size() : split.test_size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return prepare_batch(split, subset, idx);
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch_size,
                                                       std::uint64_t epoch_seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(epoch_seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
  return batches;
}

std::vector<std::vector<std::size_t>> stratified_batches(std::span<const int> labels,
                                                         std::size_t batch_size,
                                                         std::uint64_t epoch_seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::mt19937_64 rng(epoch_seed);
  const int num_classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  // Each sample gets a key (rank + jitter) / class_size, spreading every class
  // evenly along the epoch.
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  std::vector<std::pair<double, std::size_t>> keyed;
  keyed.reserve(labels.size());
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const double n = static_cast<double>(members.size());
    for (std::size_t r = 0; r < members.size(); ++r)
      keyed.emplace_back((static_cast<double>(r) + jitter(rng)) / n, members[r]);
  }
  std::sort(keyed.begin(), keyed.end());

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < keyed.size(); start += batch_size) {
    std::vector<std::size_t> b;
    for (std::size_t i = start; i < std::min(keyed.size(), start + batch_size); ++i)
      b.push_back(keyed[i].second);
    batches.push_back(std::move(b));
  }
  if (batches.size() > 1 && batches.back().size() < batch_size) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  return batches;
}

BatchIterator::BatchIterator(const OpenSetSplit& split, std::size_t batch_size,
                             std::uint64_t epoch_seed, bool stratified)
    : split_(&split),
      plan_(stratified ? stratified_batches(split.train_labels, batch_size, epoch_seed)
                       : shuffled_batches(split.train_size(), batch_size, epoch_seed)) {}

std::optional<ImageBatch> BatchIterator::next() {
  if (cursor_ >= plan_.size()) return std::nullopt;
  return prepare_batch(*split_, Subset::kTrain, plan_[cursor_++]);
}

}  // namespace dtae
