#include "tasknas/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tasknas/errors.hpp"
#include "tasknas/rng.hpp"

namespace tasknas {

void TaskSpec::validate() const {
  if (num_classes == 0) throw UsageError("task " + std::to_string(id) + " has no classes");
  for (const std::size_t y : label_map)
    if (y >= num_classes) throw UsageError("task " + std::to_string(id) + " maps a label outside its classes");
}

namespace {

TaskSpec detect(int id, DataSource source, std::initializer_list<std::size_t> positives, std::string name) {
  TaskSpec t{id, source, {}, 2, std::move(name)};
  t.label_map.fill(0);
  for (const std::size_t p : positives) t.label_map[p] = 1;
  return t;
}

TaskSpec identity(int id, DataSource source, std::string name) {
  TaskSpec t{id, source, {}, 10, std::move(name)};
  std::iota(t.label_map.begin(), t.label_map.end(), std::size_t{0});
  return t;
}

}  // namespace

std::vector<TaskSpec> benchmark_tasks() {
  // CIFAR-10 raw labels: 0 airplane, 1 automobile, 2 bird, 3 cat, 4 deer,
  // 5 dog, 6 frog, 7 horse, 8 ship, 9 truck.
  std::vector<TaskSpec> tasks;
  tasks.push_back(detect(0, DataSource::mnist, {0}, "mnist_digit0"));
  tasks.push_back(detect(1, DataSource::mnist, {6}, "mnist_digit6"));
  tasks.push_back(detect(2, DataSource::mnist, {1, 3, 5, 7, 9}, "mnist_odd_even"));
  tasks.push_back(identity(3, DataSource::mnist, "mnist_10class"));
  tasks.push_back(detect(4, DataSource::cifar10, {1, 3, 8}, "cifar_auto_cat_ship"));
  tasks.push_back(detect(5, DataSource::cifar10, {3, 8, 9}, "cifar_cat_ship_truck"));

  TaskSpec animals{6, DataSource::cifar10, {}, 4, "cifar_bird_frog_horse_other"};
  animals.label_map.fill(3);
  animals.label_map[2] = 0;
  animals.label_map[6] = 1;
  animals.label_map[7] = 2;
  tasks.push_back(animals);

  tasks.push_back(identity(7, DataSource::cifar10, "cifar_10class"));
  return tasks;
}

const TaskSpec& find_task(const std::vector<TaskSpec>& tasks, int id) {
  for (const auto& t : tasks)
    if (t.id == id) return t;
  throw UsageError("unknown task id " + std::to_string(id));
}

LabeledDataset derive_task(const LabeledDataset& data, const TaskSpec& task) {
  task.validate();
  if (data.source != task.source) {
    throw DataError("task " + std::to_string(task.id) + " expects " + to_string(task.source) + " data, got " +
                    to_string(data.source));
  }
  LabeledDataset out;
  out.sample_shape = data.sample_shape;
  out.pixels = data.pixels;
  out.source = data.source;
  out.num_classes = task.num_classes;
  out.labels.reserve(data.size());
  for (const std::size_t raw : data.labels) {
    if (raw >= task.label_map.size()) throw DataError("raw label " + std::to_string(raw) + " outside label map");
    out.labels.push_back(task.label_map[raw]);
  }
  return out;
}

DatasetSplit split(const LabeledDataset& data, const SplitConfig& cfg) {
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0))
    throw UsageError("val_fraction must lie in (0, 1)");
  if (data.size() < 2) throw DataError("cannot split fewer than 2 samples");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(cfg.seed);
  rng.shuffle(std::span<std::size_t>(order));

  std::size_t selected = data.size();
  if (cfg.subsample) selected = std::min(selected, *cfg.subsample);
  if (selected < 2) throw DataError("subsample leaves fewer than 2 samples");
  auto val_count = static_cast<std::size_t>(std::llround(static_cast<double>(selected) * cfg.val_fraction));
  val_count = std::clamp<std::size_t>(val_count, 1, selected - 1);

  const std::span<const std::size_t> all(order.data(), selected);
  return {data.subset(all.subspan(val_count)), data.subset(all.first(val_count))};
}

}  // namespace tasknas
