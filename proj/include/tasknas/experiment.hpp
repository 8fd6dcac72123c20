#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tasknas/fisher.hpp"
#include "tasknas/fuse.hpp"

namespace tasknas {

inline constexpr const char* kToolVersion = "0.1.0";

/// One flat JSON object fully determines a run. Unknown keys are rejected.
struct RunConfig {
  std::string mnist_dir;
  std::string cifar_dir;
  bool synthetic = false;
  std::size_t synthetic_count = 2500;  ///< images generated per source
  std::vector<int> tasks{0, 1, 2, 3, 4, 5, 6, 7};
  int target = 2;
  std::uint64_t seed = 0;

  double sigma_sq = 1e-6;
  double epsilon = 0.1;
  std::size_t trials = 3;
  std::size_t subsample = 2500;  ///< per task, before the split; 0 keeps everything
  double val_fraction = 0.2;
  std::size_t fisher_samples = 0;
  std::string fisher_labels = "auto";

  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 3;
  /// Norm cap on batch-mean gradients for every SGD loop; 0 disables it.
  double grad_clip = 1.0;

  double fuse_w_lr = 0.05;
  double fuse_alpha_lr = 0.5;
  std::size_t fuse_batch_size = 32;
  std::size_t fuse_epochs_per_phase = 1;
  double fuse_alpha_tol = 1e-3;
  std::size_t fuse_max_inner_iters = 4;
  std::string selection = "argmax";
  std::size_t rounds = 3;
  std::size_t patience = 2;
  std::size_t candidates = 5;
  std::size_t search_train_limit = 1000;
  std::size_t final_epochs = 0;
  std::size_t stem_channels = 8;

  std::size_t random_search_k = 3;
  std::size_t random_search_epochs = 5;

  std::string out = "run";

  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
  /// Throws UsageError on unknown task ids or out-of-range values.
  void validate() const;

  TrainConfig train_config() const;
  DistanceConfig distance_config() const;
  SearchConfig search_config() const;
  ArchitectureSpec baseline_architecture(std::size_t num_classes) const;
};

RunConfig load_run_config(const std::filesystem::path& path);

/// Loads (or synthesizes) the source datasets and builds the train/val split of
/// every requested task. Tasks of one source share the split permutation.
std::vector<TaskData> load_task_data(const RunConfig& cfg, const std::vector<int>& task_ids);

struct BaselineSummary {
  int task_id = 0;
  std::string task_name;
  double val_accuracy = 0.0;
  bool epsilon_approx = false;
};

/// Trains the stand-in network of every configured task and writes
/// checkpoints/task_<id>.json.
std::vector<BaselineSummary> cmd_train_baselines(const RunConfig& cfg);

/// Writes mean.csv, std.csv and distance_matrix.json.
DistanceMatrix cmd_distance_matrix(const RunConfig& cfg);

/// Writes architecture.json, search_result.json, random_search.json,
/// reference.json, final_network.json and search_log.jsonl.
SearchResult cmd_search(const RunConfig& cfg);

/// Reads the artifacts of a run directory and writes report.csv. Throws
/// DataError naming the missing artifacts when none is present.
std::string cmd_report(const std::filesystem::path& run_dir);

/// Merges one completed command section into <out>/manifest.json.
void update_manifest(const std::filesystem::path& out, const std::string& section, const RunConfig& cfg,
                     nlohmann::ordered_json body);

}  // namespace tasknas
