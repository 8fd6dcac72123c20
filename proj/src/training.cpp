#include "tasknas/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tasknas/errors.hpp"
#include "tasknas/rng.hpp"

namespace tasknas {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
  if (batch_size == 0) throw UsageError("batch_size must be at least 1");
  if (!(grad_clip >= 0.0)) throw UsageError("grad_clip must be nonnegative");
}

namespace {

void check_compatible(const Network& net, const LabeledDataset& data) {
  if (data.empty()) throw DataError("empty dataset");
  if (data.sample_shape.size() != net.input_shape().size()) {
    throw ShapeError("dataset samples " + data.sample_shape.to_string() + " do not match network input " +
                     net.input_shape().to_string());
  }
  if (data.num_classes > net.num_outputs()) {
    throw DataError("dataset has " + std::to_string(data.num_classes) + " classes but the network outputs " +
                    std::to_string(net.num_outputs()));
  }
}

}  // namespace

void apply_sgd(std::span<double> theta, std::span<const double> grad_sum, double learning_rate,
               std::size_t count, double max_norm) {
  const double n = static_cast<double>(count);
  double step = learning_rate;
  if (max_norm > 0.0) {
    double sq = 0.0;
    for (const double g : grad_sum) sq += (g / n) * (g / n);
    const double norm = std::sqrt(sq);
    if (norm > max_norm) step *= max_norm / norm;
  }
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= step * (grad_sum[i] / n);
}

TrainReport train(Network& net, const LabeledDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  check_compatible(net, data);
  TrainReport report;
  if (cfg.epochs == 0) return report;
  report.initial_loss = mean_loss(net, data);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(cfg.seed);
  std::vector<double> grad(net.param_count());
  std::vector<double> glogits(net.num_outputs());
  std::vector<double> sample;
  Trace trace;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        const std::size_t y = data.labels[i];
        data.copy_sample(i, sample);
        net.forward_trace(sample, trace);
        const auto p = net.output(trace);
        loss_sum -= std::log(std::max(p[y], kProbabilityFloor));
        if (p[y] < kProbabilityFloor) continue;
        for (std::size_t c = 0; c < p.size(); ++c) glogits[c] = p[c] - (c == y ? 1.0 : 0.0);
        net.backward_from_logits(trace, glogits, grad);
      }
      apply_sgd(net.theta(), grad, cfg.learning_rate, stop - start, cfg.grad_clip);
    }
    const double epoch_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss)) throw NumericalError("training diverged at epoch " + std::to_string(epoch));
    for (const double v : net.theta())
      if (!std::isfinite(v)) throw NumericalError("training diverged at epoch " + std::to_string(epoch));
    report.epoch_losses.push_back(epoch_loss);
  }
  return report;
}

double mean_loss(const Network& net, const LabeledDataset& data) {
  check_compatible(net, data);
  double total = 0.0;
  std::vector<double> sample;
  Trace trace;
  for (std::size_t i = 0; i < data.size(); ++i) {
    data.copy_sample(i, sample);
    net.forward_trace(sample, trace);
    total -= std::log(std::max(net.output(trace)[data.labels[i]], kProbabilityFloor));
  }
  return total / static_cast<double>(data.size());
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

double evaluate(const Network& net, const LabeledDataset& data) {
  check_compatible(net, data);
  std::size_t correct = 0;
  std::vector<double> sample;
  Trace trace;
  for (std::size_t i = 0; i < data.size(); ++i) {
    data.copy_sample(i, sample);
    net.forward_trace(sample, trace);
    if (argmax(net.output(trace)) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

bool is_epsilon_approx(const Network& net, const LabeledDataset& data, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw UsageError("epsilon must lie in (0, 1)");
  return evaluate(net, data) >= 1.0 - epsilon;
}

}  // namespace tasknas
