#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tasknas/tensor.hpp"

namespace tasknas {

enum class DataSource { mnist, cifar10 };

std::string to_string(DataSource source);
DataSource parse_data_source(const std::string& name);

/// Images in [0, 1] stored sample-major as channels x height x width, with
/// one class index per sample.
struct LabeledDataset {
  Shape sample_shape;
  std::vector<float> pixels;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  DataSource source = DataSource::mnist;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  std::span<const float> image(std::size_t i) const {
    return {pixels.data() + i * sample_shape.size(), sample_shape.size()};
  }
  std::span<float> image(std::size_t i) { return {pixels.data() + i * sample_shape.size(), sample_shape.size()}; }

  /// Copies sample i into `out` as 64-bit reals.
  void copy_sample(std::size_t i, std::vector<double>& out) const;

  LabeledDataset subset(std::span<const std::size_t> indices) const;

  /// Throws DataError if a label is out of range or the pixel count is off.
  void validate() const;
};

std::vector<std::size_t> class_counts(const LabeledDataset& data);

/// Reads an IDX image file (magic 0x00000803) and its IDX label file (magic
/// 0x00000801).
LabeledDataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Loads the standard MNIST file pair from `dir` (train or t10k).
LabeledDataset load_mnist(const std::filesystem::path& dir, bool train = true);

/// Reads CIFAR-10 binary batches: 3073-byte records of label then 3072 pixels.
LabeledDataset load_cifar10_batches(const std::vector<std::filesystem::path>& files);

/// Loads data_batch_1..5.bin (train) or test_batch.bin from `dir`.
LabeledDataset load_cifar10(const std::filesystem::path& dir, bool train = true);

enum class SpatialAdapt { zero_pad, bilinear };

/// 1x28x28 -> 3x32x32 by channel replication. The default zero-pads two pixels
/// on every side; bilinear resamples instead.
LabeledDataset adapt_mnist_to_rgb32(const LabeledDataset& data, SpatialAdapt mode = SpatialAdapt::zero_pad);

/// Seeded class-conditional images shaped like MNIST (1x28x28, sparse strokes on
/// black). Class prototypes are fixed; `seed` only drives per-sample variation.
LabeledDataset synthetic_mnist(std::size_t count, std::uint64_t seed);

/// Seeded class-conditional images shaped like CIFAR-10 (3x32x32, dense colored
/// textures).
LabeledDataset synthetic_cifar10(std::size_t count, std::uint64_t seed);

}  // namespace tasknas
