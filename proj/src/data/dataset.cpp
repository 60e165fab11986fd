#include "fgfp/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "fgfp/errors.hpp"

namespace fgfp::data {
namespace {

constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

std::vector<unsigned char> read_bytes(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

Dataset concat(std::vector<Dataset> parts, std::string split) {
  std::int64_t n = 0;
  for (const auto& p : parts) n += static_cast<std::int64_t>(p.size());
  Dataset out;
  out.split = std::move(split);
  auto shape = parts.front().images.shape();
  shape[0] = n;
  out.images = nd::Tensor(shape);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.images.data().begin(), p.images.data().end(), out.images.data().begin() + off);
    off += p.images.size();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

}  // namespace

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices, std::string split) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.split = std::move(split);
  if (indices.empty()) return out;
  auto shape = ds.images.shape();
  shape[0] = static_cast<std::int64_t>(indices.size());
  out.images = nd::Tensor(shape);
  const std::size_t stride = ds.images.size() / ds.size();
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = ds.images.data().subspan(indices[i] * stride, stride);
    std::copy(src.begin(), src.end(), out.images.data().begin() + i * stride);
    out.labels.push_back(ds.labels.at(indices[i]));
  }
  return out;
}

Dataset read_cifar10_batch(const std::filesystem::path& file) {
  const auto bytes = read_bytes(file);
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    throw FormatError(file.string() + ": length " + std::to_string(bytes.size()) +
                      " is not a multiple of " + std::to_string(kCifarRecord) + " (expected " +
                      std::to_string((bytes.size() / kCifarRecord + 1) * kCifarRecord) +
                      " bytes; record at offset " +
                      std::to_string(bytes.size() / kCifarRecord * kCifarRecord) + " is truncated)");
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset ds;
  ds.split = file.filename().string();
  ds.images = nd::Tensor({static_cast<std::int64_t>(n), 3, 32, 32});
  ds.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t off = r * kCifarRecord;
    const int label = bytes[off];
    if (label >= 10) {
      throw FormatError(file.string() + ": label " + std::to_string(label) + " out of range at byte offset " +
                        std::to_string(off));
    }
    ds.labels[r] = label;
    for (std::size_t q = 0; q < kCifarRecord - 1; ++q) {
      ds.images[r * (kCifarRecord - 1) + q] = static_cast<float>(bytes[off + 1 + q]) / 255.0f;
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
  std::vector<Dataset> parts;
  for (int i = 1; i <= 5; ++i) parts.push_back(read_cifar10_batch(dir / ("data_batch_" + std::to_string(i) + ".bin")));
  Dataset train = concat(std::move(parts), "train");
  Dataset test = read_cifar10_batch(dir / "test_batch.bin");
  test.split = "test";
  return {std::move(train), std::move(test)};
}

nd::Tensor read_idx_images(const std::filesystem::path& file) {
  const auto b = read_bytes(file);
  if (b.size() < 16) throw FormatError(file.string() + ": too short for an IDX image header");
  if (be32(b, 0) != 0x00000803u) throw FormatError(file.string() + ": bad IDX image magic");
  const std::size_t n = be32(b, 4), h = be32(b, 8), w = be32(b, 12);
  if (n == 0 || h == 0 || w == 0) throw FormatError(file.string() + ": empty IDX image set");
  if (b.size() != 16 + n * h * w) {
    throw FormatError(file.string() + ": expected " + std::to_string(16 + n * h * w) + " bytes, got " +
                      std::to_string(b.size()));
  }
  nd::Tensor t({static_cast<std::int64_t>(n), 1, static_cast<std::int64_t>(h), static_cast<std::int64_t>(w)});
  for (std::size_t i = 0; i < n * h * w; ++i) t[i] = static_cast<float>(b[16 + i]) / 255.0f;
  return t;
}

std::vector<int> read_idx_labels(const std::filesystem::path& file) {
  const auto b = read_bytes(file);
  if (b.size() < 8) throw FormatError(file.string() + ": too short for an IDX label header");
  if (be32(b, 0) != 0x00000801u) throw FormatError(file.string() + ": bad IDX label magic");
  const std::size_t n = be32(b, 4);
  if (b.size() != 8 + n) {
    throw FormatError(file.string() + ": expected " + std::to_string(8 + n) + " bytes, got " + std::to_string(b.size()));
  }
  std::vector<int> labels(b.begin() + 8, b.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] > 9) throw FormatError(file.string() + ": label out of range at index " + std::to_string(i));
  }
  return labels;
}

std::pair<Dataset, Dataset> load_mnist_idx(const std::filesystem::path& dir) {
  auto load = [&](const std::string& prefix, const std::string& split) {
    Dataset ds;
    ds.split = split;
    ds.images = read_idx_images(dir / (prefix + "-images-idx3-ubyte"));
    ds.labels = read_idx_labels(dir / (prefix + "-labels-idx1-ubyte"));
    if (static_cast<std::int64_t>(ds.labels.size()) != ds.images.dim(0)) {
      throw FormatError(dir.string() + ": " + prefix + " has " + std::to_string(ds.images.dim(0)) + " images but " +
                        std::to_string(ds.labels.size()) + " labels");
    }
    return ds;
  };
  return {load("train", "train"), load("t10k", "test")};
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& train, std::uint64_t seed, std::size_t val_count) {
  if (val_count >= train.size()) throw UsageError("validation split must be smaller than the training set");
  Rng rng = Rng::derive(seed, "split");
  std::vector<std::vector<std::size_t>> by_class(train.num_classes);
  for (std::size_t i = 0; i < train.size(); ++i) by_class.at(train.labels[i]).push_back(i);

  // Largest-remainder apportionment of val_count across classes.
  const std::size_t n = train.size();
  std::vector<std::size_t> quota(by_class.size());
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const double exact = static_cast<double>(val_count) * by_class[c].size() / n;
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    rema.emplace_back(-(exact - quota[c]), c);
  }
  std::sort(rema.begin(), rema.end());
  for (std::size_t k = 0; assigned < val_count; ++k, ++assigned) ++quota[rema[k].second];

  std::vector<std::size_t> tr, va;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto idx = by_class[c];
    rng.shuffle(idx);
    va.insert(va.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    tr.insert(tr.end(), idx.begin() + static_cast<std::ptrdiff_t>(quota[c]), idx.end());
  }
  rng.shuffle(tr);
  rng.shuffle(va);
  return {subset(train, tr, "train"), subset(train, va, "val")};
}

ChannelStats compute_channel_stats(const Dataset& ds) {
  const auto n = ds.images.dim(0), c = ds.images.dim(1), plane = ds.images.dim(2) * ds.images.dim(3);
  ChannelStats s;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const float* p = ds.images.data().data() + (i * c + ch) * plane;
      for (std::int64_t q = 0; q < plane; ++q) {
        sum += p[q];
        sq += static_cast<double>(p[q]) * p[q];
      }
    }
    const double cnt = static_cast<double>(n * plane);
    const double mean = sum / cnt;
    s.mean.push_back(static_cast<float>(mean));
    s.stddev.push_back(static_cast<float>(std::sqrt(std::max(sq / cnt - mean * mean, 1e-12))));
  }
  return s;
}

void standardize(Dataset& ds, const ChannelStats& stats) {
  const auto n = ds.images.dim(0), c = ds.images.dim(1), plane = ds.images.dim(2) * ds.images.dim(3);
  if (static_cast<std::size_t>(c) != stats.mean.size()) throw DimensionError("channel stats do not match dataset");
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      float* p = ds.images.data().data() + (i * c + ch) * plane;
      for (std::int64_t q = 0; q < plane; ++q) p[q] = (p[q] - stats.mean[ch]) / stats.stddev[ch];
    }
  }
}

BatchIterator::BatchIterator(const Dataset& ds, int batch_size, std::uint64_t seed, bool augment)
    : ds_(&ds), batch_size_(batch_size), augment_(augment), rng_(Rng::derive(seed, "shuffle")) {
  if (batch_size < 1) throw UsageError("batch size must be >= 1");
  if (ds.size() == 0) throw UsageError("cannot iterate an empty dataset");
  order_.resize(ds.size());
  reshuffle();
}

void BatchIterator::reshuffle() {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  rng_.shuffle(order_);
  cursor_ = 0;
}

std::size_t BatchIterator::batches_per_epoch() const {
  return (ds_->size() + static_cast<std::size_t>(batch_size_) - 1) / static_cast<std::size_t>(batch_size_);
}

bool BatchIterator::next(Batch& out) {
  bool fresh = cursor_ == 0;
  if (cursor_ >= order_.size()) {
    reshuffle();
    fresh = true;
  }
  const std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(batch_size_));
  std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  Dataset b = subset(*ds_, idx, ds_->split);
  if (augment_) {
    const auto c = b.images.dim(1), h = b.images.dim(2), w = b.images.dim(3);
    std::vector<float> tmp(static_cast<std::size_t>(c * h * w));
    for (std::int64_t i = 0; i < b.images.dim(0); ++i) {
      const int dy = static_cast<int>(rng_.below(9)) - 4, dx = static_cast<int>(rng_.below(9)) - 4;
      const bool flip = rng_.below(2) == 1;
      float* img = b.images.data().data() + i * c * h * w;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t y = 0; y < h; ++y) {
          for (std::int64_t x = 0; x < w; ++x) {
            const std::int64_t sy = y + dy, sx0 = x + dx;
            const std::int64_t sx = flip ? (w - 1 - sx0) : sx0;
            const bool inside = sy >= 0 && sy < h && sx0 >= 0 && sx0 < w;
            tmp[(ch * h + y) * w + x] = inside ? img[(ch * h + sy) * w + sx] : 0.0f;
          }
        }
      }
      std::copy(tmp.begin(), tmp.end(), img);
    }
  }
  out.images = std::move(b.images);
  out.labels = std::move(b.labels);
  return fresh;
}

Batch slice(const Dataset& ds, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx;
  for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
  Dataset b = subset(ds, idx, ds.split);
  return {std::move(b.images), std::move(b.labels)};
}

}  // namespace fgfp::data
