#include "dass/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>

#include "dass/error.hpp"

namespace dass {
namespace {

constexpr std::array<float, 3> kCifarMean{0.4914f, 0.4822f, 0.4465f};
constexpr std::array<float, 3> kCifarStd{0.2470f, 0.2435f, 0.2616f};

void append(Dataset& dst, const Dataset& src) {
  dst.images.insert(dst.images.end(), src.images.begin(), src.images.end());
  dst.labels.insert(dst.labels.end(), src.labels.begin(), src.labels.end());
}

Dataset empty_like(const Dataset& d) {
  Dataset out;
  out.channels = d.channels;
  out.height = d.height;
  out.width = d.width;
  out.num_classes = d.num_classes;
  return out;
}

}  // namespace

Tensor Dataset::batch_images(std::span<const int64_t> indices) const {
  const int64_t per = sample_numel();
  Tensor out(Shape{static_cast<int64_t>(indices.size()), channels, height, width});
  for (size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(images.data() + indices[i] * per, per, out.data() + static_cast<int64_t>(i) * per);
  }
  return out;
}

std::vector<int> Dataset::batch_labels(std::span<const int64_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int64_t i : indices) out.push_back(labels[static_cast<size_t>(i)]);
  return out;
}

Dataset Dataset::subset(std::span<const int64_t> indices) const {
  Dataset out = empty_like(*this);
  const int64_t per = sample_numel();
  out.images.reserve(indices.size() * static_cast<size_t>(per));
  for (int64_t i : indices) {
    out.images.insert(out.images.end(), images.begin() + i * per, images.begin() + (i + 1) * per);
    out.labels.push_back(labels[static_cast<size_t>(i)]);
  }
  return out;
}

Dataset read_cifar10_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open CIFAR-10 file " + file.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    const size_t bad = bytes.size() - bytes.size() % kCifarRecordBytes;
    throw FormatError(file.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of " +
                      std::to_string(kCifarRecordBytes) + " (incomplete record at byte offset " + std::to_string(bad) +
                      ")");
  }
  Dataset d;
  const size_t records = bytes.size() / kCifarRecordBytes;
  d.images.resize(records * 3072);
  d.labels.resize(records);
  for (size_t r = 0; r < records; ++r) {
    const size_t off = r * kCifarRecordBytes;
    const unsigned label = bytes[off];
    if (label > 9) {
      throw FormatError(file.string() + ": label byte " + std::to_string(label) + " at byte offset " +
                        std::to_string(off) + " is outside [0, 9]");
    }
    d.labels[r] = static_cast<int>(label);
    for (size_t c = 0; c < 3; ++c) {
      for (size_t i = 0; i < 1024; ++i) {
        const float v = static_cast<float>(bytes[off + 1 + c * 1024 + i]) / 255.0f;
        d.images[r * 3072 + c * 1024 + i] = (v - kCifarMean[c]) / kCifarStd[c];
      }
    }
  }
  return d;
}

DataSplit load_cifar10(const std::filesystem::path& dir, int64_t subset_size, double train_fraction, uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_val_split must lie in (0, 1)");
  if (!std::filesystem::is_directory(dir)) throw ConfigError("CIFAR-10 directory not found: " + dir.string());
  Dataset pool;
  for (int b = 1; b <= 5; ++b) {
    const auto file = dir / ("data_batch_" + std::to_string(b) + ".bin");
    if (std::filesystem::exists(file)) append(pool, read_cifar10_file(file));
  }
  if (pool.labels.empty()) throw ConfigError("no data_batch_*.bin files in " + dir.string());
  const auto test_file = dir / "test_batch.bin";
  if (!std::filesystem::exists(test_file)) throw ConfigError("missing " + test_file.string());
  Dataset test = read_cifar10_file(test_file);

  Rng rng(seed);
  const auto order = rng.permutation(pool.size());
  const auto n_train = static_cast<int64_t>(std::floor(static_cast<double>(pool.size()) * train_fraction));
  auto cap = [subset_size](int64_t n) { return subset_size > 0 ? std::min(n, subset_size) : n; };
  const std::span<const int64_t> all(order);
  DataSplit split;
  split.train = pool.subset(all.subspan(0, static_cast<size_t>(cap(n_train))));
  split.val = pool.subset(all.subspan(static_cast<size_t>(n_train), static_cast<size_t>(cap(pool.size() - n_train))));
  std::vector<int64_t> test_idx(static_cast<size_t>(cap(test.size())));
  for (size_t i = 0; i < test_idx.size(); ++i) test_idx[i] = static_cast<int64_t>(i);
  split.test = test.subset(test_idx);
  return split;
}

DataSplit gen_synthetic(int64_t n, int classes, int image_size, uint64_t seed, double sigma) {
  if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (n < classes) throw ConfigError("synthetic data needs n >= classes");
  if (image_size < 4) throw ConfigError("synthetic image_size must be at least 4");
  const int C = 3, S = image_size;
  const int64_t per = int64_t{C} * S * S;

  // Each class mean is a sum of three colored Gaussian blobs.
  Rng pattern_rng = Rng(seed).fork(0);
  std::vector<float> means(static_cast<size_t>(classes * per), 0.0f);
  for (int k = 0; k < classes; ++k) {
    for (int blob = 0; blob < 3; ++blob) {
      const double cy = pattern_rng.uniform() * S, cx = pattern_rng.uniform() * S;
      const double width = (0.1 + 0.2 * pattern_rng.uniform()) * S;
      std::array<double, 3> color{};
      for (double& c : color) c = 2.0 * pattern_rng.uniform() - 1.0;
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < S; ++y)
          for (int x = 0; x < S; ++x) {
            const double r2 = ((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (2.0 * width * width);
            means[static_cast<size_t>(k * per + (c * S + y) * S + x)] += static_cast<float>(color[c] * std::exp(-r2));
          }
    }
  }

  auto make = [&](uint64_t tag) {
    Rng rng = Rng(seed).fork(tag);
    Dataset d;
    d.channels = C;
    d.height = d.width = S;
    d.num_classes = classes;
    d.labels.resize(static_cast<size_t>(n));
    const auto order = rng.permutation(n);
    for (int64_t i = 0; i < n; ++i) d.labels[static_cast<size_t>(order[static_cast<size_t>(i)])] = static_cast<int>(i % classes);
    d.images.resize(static_cast<size_t>(n * per));
    for (int64_t i = 0; i < n; ++i) {
      const float* mean = means.data() + d.labels[static_cast<size_t>(i)] * per;
      for (int64_t j = 0; j < per; ++j) {
        d.images[static_cast<size_t>(i * per + j)] = mean[j] + static_cast<float>(sigma * rng.normal());
      }
    }
    return d;
  };
  return DataSplit{make(1), make(2), make(3)};
}

void augment_batch(Tensor& images, Rng& rng) {
  const int64_t N = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  const int64_t pad = std::max<int64_t>(1, H / 8);
  std::vector<float> src(static_cast<size_t>(C * H * W));
  for (int64_t n = 0; n < N; ++n) {
    float* img = images.data() + n * C * H * W;
    std::copy_n(img, C * H * W, src.data());
    const int64_t dy = static_cast<int64_t>(rng.below(static_cast<uint64_t>(2 * pad + 1))) - pad;
    const int64_t dx = static_cast<int64_t>(rng.below(static_cast<uint64_t>(2 * pad + 1))) - pad;
    const bool flip = rng.below(2) == 1;
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          const int64_t sy = y + dy, sx0 = x + dx;
          const int64_t sx = flip ? (W - 1 - sx0) : sx0;
          const bool inside = sy >= 0 && sy < H && sx0 >= 0 && sx0 < W;
          img[(c * H + y) * W + x] = inside ? src[static_cast<size_t>((c * H + sy) * W + sx)] : 0.0f;
        }
  }
}

}  // namespace dass
