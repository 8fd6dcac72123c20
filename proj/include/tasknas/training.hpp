#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tasknas/dataset.hpp"
#include "tasknas/layers.hpp"
#include "tasknas/network.hpp"

namespace tasknas {

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 3;
  /// Norm cap for the batch-mean gradient; 0 disables clipping.
  double grad_clip = 0.0;
  std::uint64_t seed = 0;
  WeightInit weight_init = WeightInit::uniform_scaled;

  void validate() const;
};

struct TrainReport {
  /// Mean cross-entropy over the dataset before the first update; 0 when no
  /// epochs ran.
  double initial_loss = 0.0;
  /// Mean per-sample loss observed during each epoch.
  std::vector<double> epoch_losses;
};

/// Plain minibatch SGD on cross-entropy. The data order is shuffled every epoch
/// from `cfg.seed`; weights are not re-initialized.
TrainReport train(Network& net, const LabeledDataset& data, const TrainConfig& cfg);

/// theta -= lr * grad_sum / count, the single update rule shared by every
/// optimizer loop in the project. With max_norm > 0 the step is shortened so
/// the batch-mean gradient it applies has L2 norm at most max_norm.
void apply_sgd(std::span<double> theta, std::span<const double> grad_sum, double learning_rate,
               std::size_t count, double max_norm = 0.0);

/// Mean clamped cross-entropy.
double mean_loss(const Network& net, const LabeledDataset& data);

/// Fraction of samples whose argmax output equals the label.
double evaluate(const Network& net, const LabeledDataset& data);

/// True iff evaluate(net, data) >= 1 - epsilon.
bool is_epsilon_approx(const Network& net, const LabeledDataset& data, double epsilon);

std::size_t argmax(std::span<const double> values);

}  // namespace tasknas
