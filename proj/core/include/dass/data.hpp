#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dass/rng.hpp"
#include "dass/tensor.hpp"

namespace dass {

/// Labeled images stored contiguously in NCHW order.
struct Dataset {
  int channels = 3;
  int height = 32;
  int width = 32;
  int num_classes = 10;
  std::vector<float> images;
  std::vector<int> labels;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  int64_t sample_numel() const { return int64_t{channels} * height * width; }

  Tensor batch_images(std::span<const int64_t> indices) const;
  std::vector<int> batch_labels(std::span<const int64_t> indices) const;
  Dataset subset(std::span<const int64_t> indices) const;
};

struct DataSplit {
  Dataset train;
  Dataset val;
  Dataset test;
};

inline constexpr int64_t kCifarRecordBytes = 3073;

/// Parses one CIFAR-10 binary batch file. Pixels are scaled to [0, 1] and
/// standardized per channel with the published dataset statistics.
/// Throws FormatError with the offending byte offset.
Dataset read_cifar10_file(const std::filesystem::path& file);

/// Loads data_batch_*.bin for train/val (shuffled by `seed`, split by
/// `train_fraction`) and test_batch.bin for test. `subset_size` > 0 caps each
/// split.
DataSplit load_cifar10(const std::filesystem::path& dir, int64_t subset_size, double train_fraction, uint64_t seed);

/// Class-conditional Gaussian-blob images: one fixed mean pattern per class
/// plus N(0, sigma^2) pixel noise. Each split holds `n` samples with balanced
/// labels (n / classes each when divisible).
DataSplit gen_synthetic(int64_t n, int classes, int image_size, uint64_t seed, double sigma = 0.3);

/// Random crop (zero padding of size/8) and horizontal flip, in place.
void augment_batch(Tensor& images, Rng& rng);

}  // namespace dass
