#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fgfp/nd/tensor.hpp"
#include "fgfp/rng.hpp"

namespace fgfp::data {

struct Dataset {
  nd::Tensor images;        // [N, C, H, W]
  std::vector<int> labels;  // in [0, num_classes)
  int num_classes = 10;
  std::string split;

  std::size_t size() const { return labels.size(); }
  nd::Shape sample_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
};

// Copy of the given samples, in the given order.
Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices, std::string split);

// One CIFAR-10 binary v1 file: records of 1 label byte + 3072 pixel bytes
// (R, G, B planes, row-major 32x32). Pixels scaled to [0, 1].
Dataset read_cifar10_batch(const std::filesystem::path& file);

// data_batch_1..5.bin -> train (50K), test_batch.bin -> test (10K).
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir);

// IDX readers (big-endian, magic 0x00000803 images / 0x00000801 labels).
nd::Tensor read_idx_images(const std::filesystem::path& file);
std::vector<int> read_idx_labels(const std::filesystem::path& file);

// train-images-idx3-ubyte / train-labels-idx1-ubyte and the t10k-* pair.
// Images come back as [N, 1, 28, 28] floats in [0, 1].
std::pair<Dataset, Dataset> load_mnist_idx(const std::filesystem::path& dir);

// Class-stratified deterministic split. Each class contributes its share of
// `val_count` (largest-remainder rounding); both halves are shuffled by seed.
// For CIFAR-10 (50K, val_count 5000) this is 4500 / 500 per class.
std::pair<Dataset, Dataset> split_train_val(const Dataset& train, std::uint64_t seed,
                                            std::size_t val_count = 5000);

struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> stddev;
};

ChannelStats compute_channel_stats(const Dataset& ds);
void standardize(Dataset& ds, const ChannelStats& stats);

struct Batch {
  nd::Tensor images;
  std::vector<int> labels;
};

// Seeded epoch permutations over a dataset. Augmentation (CIFAR style: 4-pixel
// zero-pad random crop + horizontal flip) is applied per sample when enabled.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, int batch_size, std::uint64_t seed, bool augment = false);

  // Fills `out` with the next batch, starting a fresh permutation when the
  // current epoch is exhausted. Returns true when this batch began an epoch.
  bool next(Batch& out);

  std::size_t batches_per_epoch() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  void reshuffle();

  const Dataset* ds_;
  int batch_size_;
  bool augment_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Copy samples [begin, end) of `ds` in storage order into a batch.
Batch slice(const Dataset& ds, std::size_t begin, std::size_t end);

}  // namespace fgfp::data
