#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tasknas/network.hpp"
#include "tasknas/tasks.hpp"
#include "tasknas/training.hpp"

namespace tasknas {

/// Which label the per-sample log-likelihood gradient is taken at.
enum class FisherLabels {
  true_label,  ///< the dataset label
  predicted,   ///< the network's own argmax prediction
  automatic,   ///< true labels when they fit the network's output arity, else predicted
};

std::string to_string(FisherLabels labels);
FisherLabels parse_fisher_labels(const std::string& name);

/// Diagonal of the empirical Fisher information: the mean over M samples of the
/// squared per-sample log-likelihood gradient.
struct FisherDiagonal {
  std::vector<double> values;
  std::string network_id;
  std::string data_task_id;
  std::size_t sample_count = 0;
};

/// Elementwise mean of squared rows, i.e. the diagonal of (1/M) sum_i g_i g_i^T.
std::vector<double> mean_squared_gradients(const std::vector<std::vector<double>>& rows);

/// Draws M samples without replacement (order fixed by `seed`) and averages
/// squared log-likelihood gradients. With FisherLabels::automatic the choice is
/// made once for the whole dataset.
FisherDiagonal empirical_fisher_diag(const Network& net, const LabeledDataset& data, std::size_t M,
                                     std::uint64_t seed, FisherLabels labels = FisherLabels::true_label);

/// (1/n) * sum_j log(values[j] + sigma_sq): the normalized log-determinant of
/// diag(values) + sigma_sq * I.
double log_det_term(std::span<const double> values, double sigma_sq);
double log_det_term(const FisherDiagonal& fisher, double sigma_sq);

struct DistanceEntry {
  std::string from_task;
  std::string to_task;
  double value = 0.0;
  double sigma_sq = 0.0;
  std::size_t n = 0;  ///< parameters of the baseline network
  std::size_t m = 0;  ///< parameters of the target network
};

/// |log_det_term(F_bt) - log_det_term(F_tt)|; F_bt comes from the baseline
/// network and F_tt from the target network, both on target data.
DistanceEntry distance(const FisherDiagonal& f_bt, const FisherDiagonal& f_tt, double sigma_sq);

struct TaskData {
  TaskSpec task;
  DatasetSplit data;
};

/// Builds a freshly initialized stand-in network for a task.
using NetFactory = std::function<Network(const TaskSpec& task, const Shape& input, std::uint64_t seed)>;

/// The default stand-in: presets::small_convnet with uniform-scaled init.
NetFactory small_convnet_factory(WeightInit init = WeightInit::uniform_scaled);

struct DistanceConfig {
  TrainConfig train;
  double sigma_sq = 1e-6;
  double epsilon = 0.1;
  std::size_t fisher_samples = 0;  ///< 0 uses the full target validation split
  FisherLabels labels = FisherLabels::automatic;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PipelineResult {
  DistanceEntry entry;
  double baseline_accuracy = 0.0;
  double target_accuracy = 0.0;
  bool baseline_is_approx = false;
  bool target_is_approx = false;
};

/// Trains both networks on their own task's training split (skipped when
/// `train_nets` is false), checks the epsilon criterion on their validation
/// splits, and returns the distance computed on the target validation data.
PipelineResult distance_pipeline(const TaskData& baseline, const TaskData& target, Network& net_b,
                                 Network& net_t, const DistanceConfig& cfg, bool train_nets = true);

/// Same as empirical_fisher_diag but resolves FisherLabels::automatic for a
/// (baseline, target) pair so both Fisher diagonals use one convention.
FisherLabels resolve_pair_labels(FisherLabels requested, const Network& net_b, const Network& net_t,
                                 const LabeledDataset& target_data);

struct DistanceMatrix {
  std::vector<int> task_ids;
  std::vector<std::string> task_names;
  std::size_t trials = 0;
  /// mean[b][t]: row is the baseline (from), column the target (to).
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> std;
  /// per_trial[k][b][t]
  std::vector<std::vector<std::vector<double>>> per_trial;
  /// accuracy[k][i]: validation accuracy of task i's network in trial k.
  std::vector<std::vector<double>> accuracy;
  std::vector<std::uint64_t> trial_seeds;
};

/// Seed for task `task_id`'s network in trial `trial`.
std::uint64_t trial_net_seed(std::uint64_t base_seed, std::size_t trial, int task_id);

/// Trains one network per task and trial, then fills d[b][t] for every pair.
/// The standard deviation is the population value over trials.
DistanceMatrix distance_matrix(const std::vector<TaskData>& tasks, std::size_t trials, const DistanceConfig& cfg,
                               const NetFactory& factory);

/// argmin over column `target_id`, skipping the target itself; ties go to the
/// lowest index.
int closest_task(const DistanceMatrix& matrix, int target_id);

/// CSV with header "from\to,<names...>" and one row per baseline task.
std::string matrix_csv(const std::vector<std::vector<double>>& values, const std::vector<std::string>& names);

}  // namespace tasknas
