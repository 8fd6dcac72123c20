#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tasknas/dataset.hpp"

namespace tasknas {

/// A classification task: a source dataset plus a total map from the source's
/// raw labels {0..9} onto task labels [0, num_classes).
struct TaskSpec {
  int id = 0;
  DataSource source = DataSource::mnist;
  std::array<std::size_t, 10> label_map{};
  std::size_t num_classes = 10;
  std::string name;

  /// Throws UsageError if a mapped label is out of range.
  void validate() const;
};

/// The eight benchmark tasks: 0-3 on MNIST, 4-7 on CIFAR-10. Binary detection
/// tasks use label 1 for a positive detection.
std::vector<TaskSpec> benchmark_tasks();

const TaskSpec& find_task(const std::vector<TaskSpec>& tasks, int id);

/// Relabels `data` with the task's label map. Images are untouched.
LabeledDataset derive_task(const LabeledDataset& data, const TaskSpec& task);

struct SplitConfig {
  double val_fraction = 0.2;
  /// Cap on the number of samples drawn before splitting.
  std::optional<std::size_t> subsample;
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset val;
};

/// Deterministic disjoint train/validation partition of a seeded permutation.
DatasetSplit split(const LabeledDataset& data, const SplitConfig& cfg);

}  // namespace tasknas
