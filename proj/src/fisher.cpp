#include "tasknas/fisher.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "tasknas/errors.hpp"
#include "tasknas/rng.hpp"

namespace tasknas {

std::string to_string(FisherLabels labels) {
  switch (labels) {
    case FisherLabels::true_label: return "true";
    case FisherLabels::predicted: return "predicted";
    case FisherLabels::automatic: return "auto";
  }
  return "auto";
}

FisherLabels parse_fisher_labels(const std::string& name) {
  if (name == "true") return FisherLabels::true_label;
  if (name == "predicted") return FisherLabels::predicted;
  if (name == "auto") return FisherLabels::automatic;
  throw UsageError("unknown fisher label mode '" + name + "' (expected true, predicted or auto)");
}

namespace {

bool labels_fit(const LabeledDataset& data, std::size_t arity) {
  return std::all_of(data.labels.begin(), data.labels.end(), [&](std::size_t y) { return y < arity; });
}

}  // namespace

std::vector<double> mean_squared_gradients(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw UsageError("no gradient rows");
  std::vector<double> out(rows.front().size(), 0.0);
  for (const auto& g : rows) {
    if (g.size() != out.size()) throw ShapeError("gradient rows differ in length");
    for (std::size_t j = 0; j < g.size(); ++j) out[j] += g[j] * g[j];
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (double& v : out) v *= inv;
  return out;
}

FisherDiagonal empirical_fisher_diag(const Network& net, const LabeledDataset& data, std::size_t M,
                                     std::uint64_t seed, FisherLabels labels) {
  if (M == 0) throw UsageError("Fisher sample count M must be positive");
  if (M > data.size()) {
    throw UsageError("Fisher sample count " + std::to_string(M) + " exceeds dataset size " +
                     std::to_string(data.size()));
  }
  if (labels == FisherLabels::automatic)
    labels = labels_fit(data, net.num_outputs()) ? FisherLabels::true_label : FisherLabels::predicted;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  FisherDiagonal out;
  out.values.assign(net.param_count(), 0.0);
  out.sample_count = M;
  std::vector<double> grad(net.param_count());
  std::vector<double> sample;
  Trace trace;
  for (std::size_t k = 0; k < M; ++k) {
    const std::size_t i = order[k];
    data.copy_sample(i, sample);
    net.forward_trace(sample, trace);
    const std::size_t y = labels == FisherLabels::predicted ? argmax(net.output(trace)) : data.labels[i];
    loglik_grad_from_trace(net, trace, y, grad);
    for (std::size_t j = 0; j < grad.size(); ++j) out.values[j] += grad[j] * grad[j];
  }
  const double inv = 1.0 / static_cast<double>(M);
  for (double& v : out.values) v *= inv;
  return out;
}

double log_det_term(std::span<const double> values, double sigma_sq) {
  if (!(sigma_sq > 0.0)) throw UsageError("sigma_sq must be positive");
  if (values.empty()) throw UsageError("empty Fisher diagonal");
  double total = 0.0;
  for (const double v : values) total += std::log(v + sigma_sq);
  return total / static_cast<double>(values.size());
}

double log_det_term(const FisherDiagonal& fisher, double sigma_sq) { return log_det_term(fisher.values, sigma_sq); }

DistanceEntry distance(const FisherDiagonal& f_bt, const FisherDiagonal& f_tt, double sigma_sq) {
  if (!(sigma_sq > 0.0)) throw UsageError("sigma_sq must be positive");
  DistanceEntry e;
  e.from_task = f_bt.network_id;
  e.to_task = f_tt.data_task_id;
  e.sigma_sq = sigma_sq;
  e.n = f_bt.values.size();
  e.m = f_tt.values.size();
  e.value = std::abs(log_det_term(f_bt, sigma_sq) - log_det_term(f_tt, sigma_sq));
  return e;
}

NetFactory small_convnet_factory(WeightInit init) {
  return [init](const TaskSpec& task, const Shape& input, std::uint64_t seed) {
    return make_network(input, presets::small_convnet(task.num_classes), seed, init);
  };
}

void DistanceConfig::validate() const {
  train.validate();
  if (!(sigma_sq > 0.0)) throw UsageError("sigma_sq must be positive");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw UsageError("epsilon must lie in (0, 1)");
}

FisherLabels resolve_pair_labels(FisherLabels requested, const Network& net_b, const Network& net_t,
                                 const LabeledDataset& target_data) {
  if (requested != FisherLabels::automatic) return requested;
  const std::size_t arity = std::min(net_b.num_outputs(), net_t.num_outputs());
  return labels_fit(target_data, arity) ? FisherLabels::true_label : FisherLabels::predicted;
}

namespace {

std::size_t fisher_count(const DistanceConfig& cfg, const LabeledDataset& val) {
  return cfg.fisher_samples == 0 ? val.size() : std::min(cfg.fisher_samples, val.size());
}

void warn_if_not_approx(const TaskSpec& task, double accuracy, double epsilon) {
  if (accuracy < 1.0 - epsilon) {
    std::clog << "warning: network for task " << task.id << " reaches accuracy " << accuracy
              << " < 1 - epsilon = " << 1.0 - epsilon << "\n";
  }
}

}  // namespace

PipelineResult distance_pipeline(const TaskData& baseline, const TaskData& target, Network& net_b,
                                 Network& net_t, const DistanceConfig& cfg, bool train_nets) {
  cfg.validate();
  if (train_nets) {
    TrainConfig tb = cfg.train;
    tb.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(baseline.task.id));
    train(net_b, baseline.data.train, tb);
    if (&net_b != &net_t) {
      TrainConfig tt = cfg.train;
      tt.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(target.task.id));
      train(net_t, target.data.train, tt);
    }
  }
  PipelineResult r;
  r.baseline_accuracy = evaluate(net_b, baseline.data.val);
  r.target_accuracy = evaluate(net_t, target.data.val);
  r.baseline_is_approx = r.baseline_accuracy >= 1.0 - cfg.epsilon;
  r.target_is_approx = r.target_accuracy >= 1.0 - cfg.epsilon;
  warn_if_not_approx(baseline.task, r.baseline_accuracy, cfg.epsilon);
  warn_if_not_approx(target.task, r.target_accuracy, cfg.epsilon);

  const LabeledDataset& xt = target.data.val;
  const FisherLabels mode = resolve_pair_labels(cfg.labels, net_b, net_t, xt);
  const std::size_t M = fisher_count(cfg, xt);
  const std::uint64_t fseed = mix_seed(cfg.seed, 0xF15 + static_cast<std::uint64_t>(target.task.id));
  FisherDiagonal f_bt = empirical_fisher_diag(net_b, xt, M, fseed, mode);
  f_bt.network_id = std::to_string(baseline.task.id);
  f_bt.data_task_id = std::to_string(target.task.id);
  FisherDiagonal f_tt = &net_b == &net_t ? f_bt : empirical_fisher_diag(net_t, xt, M, fseed, mode);
  f_tt.network_id = std::to_string(target.task.id);
  f_tt.data_task_id = std::to_string(target.task.id);
  r.entry = distance(f_bt, f_tt, cfg.sigma_sq);
  return r;
}

std::uint64_t trial_net_seed(std::uint64_t base_seed, std::size_t trial, int task_id) {
  return mix_seed(mix_seed(base_seed, trial), static_cast<std::uint64_t>(task_id));
}

DistanceMatrix distance_matrix(const std::vector<TaskData>& tasks, std::size_t trials, const DistanceConfig& cfg,
                               const NetFactory& factory) {
  cfg.validate();
  if (tasks.size() < 2) throw UsageError("a distance matrix needs at least 2 tasks");
  if (trials == 0) throw UsageError("trials must be positive");
  const std::size_t K = tasks.size();

  DistanceMatrix out;
  out.trials = trials;
  for (const auto& t : tasks) {
    out.task_ids.push_back(t.task.id);
    out.task_names.push_back(t.task.name);
  }
  out.mean.assign(K, std::vector<double>(K, 0.0));
  out.std.assign(K, std::vector<double>(K, 0.0));

  for (std::size_t k = 0; k < trials; ++k) {
    const std::uint64_t trial_seed = mix_seed(cfg.seed, k);
    out.trial_seeds.push_back(trial_seed);
    std::vector<Network> nets;
    std::vector<double> acc;
    for (const auto& t : tasks) {
      const std::uint64_t net_seed = trial_net_seed(cfg.seed, k, t.task.id);
      Network net = factory(t.task, t.data.train.sample_shape, net_seed);
      TrainConfig tc = cfg.train;
      tc.seed = mix_seed(net_seed, 0x7a1);
      train(net, t.data.train, tc);
      acc.push_back(evaluate(net, t.data.val));
      warn_if_not_approx(t.task, acc.back(), cfg.epsilon);
      nets.push_back(std::move(net));
    }
    out.accuracy.push_back(acc);

    std::vector<std::vector<double>> d(K, std::vector<double>(K, 0.0));
    for (std::size_t t = 0; t < K; ++t) {
      const LabeledDataset& xt = tasks[t].data.val;
      const std::size_t M = fisher_count(cfg, xt);
      const std::uint64_t fseed = mix_seed(trial_seed, 0xF15 + t);
      std::map<FisherLabels, FisherDiagonal> own;
      auto own_fisher = [&](FisherLabels mode) -> const FisherDiagonal& {
        auto it = own.find(mode);
        if (it == own.end()) it = own.emplace(mode, empirical_fisher_diag(nets[t], xt, M, fseed, mode)).first;
        return it->second;
      };
      for (std::size_t b = 0; b < K; ++b) {
        if (b == t) {
          const auto& f = own_fisher(resolve_pair_labels(cfg.labels, nets[t], nets[t], xt));
          d[b][t] = distance(f, f, cfg.sigma_sq).value;
          continue;
        }
        const FisherLabels mode = resolve_pair_labels(cfg.labels, nets[b], nets[t], xt);
        const FisherDiagonal f_bt = empirical_fisher_diag(nets[b], xt, M, fseed, mode);
        d[b][t] = distance(f_bt, own_fisher(mode), cfg.sigma_sq).value;
      }
    }
    out.per_trial.push_back(std::move(d));
  }

  for (std::size_t b = 0; b < K; ++b) {
    for (std::size_t t = 0; t < K; ++t) {
      double sum = 0.0;
      for (const auto& d : out.per_trial) sum += d[b][t];
      const double mean = sum / static_cast<double>(trials);
      double var = 0.0;
      for (const auto& d : out.per_trial) var += (d[b][t] - mean) * (d[b][t] - mean);
      out.mean[b][t] = mean;
      out.std[b][t] = std::sqrt(var / static_cast<double>(trials));
    }
  }
  return out;
}

int closest_task(const DistanceMatrix& matrix, int target_id) {
  const std::size_t K = matrix.task_ids.size();
  if (K < 2) throw UsageError("closest_task needs at least one baseline besides the target");
  const auto it = std::find(matrix.task_ids.begin(), matrix.task_ids.end(), target_id);
  if (it == matrix.task_ids.end()) throw UsageError("target task " + std::to_string(target_id) + " not in matrix");
  const auto t = static_cast<std::size_t>(it - matrix.task_ids.begin());
  std::size_t best = K;
  for (std::size_t b = 0; b < K; ++b) {
    if (b == t) continue;
    if (best == K || matrix.mean[b][t] < matrix.mean[best][t]) best = b;
  }
  return matrix.task_ids[best];
}

std::string matrix_csv(const std::vector<std::vector<double>>& values, const std::vector<std::string>& names) {
  std::ostringstream out;
  out << "from\\to";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  char buf[64];
  for (std::size_t b = 0; b < values.size(); ++b) {
    out << names.at(b);
    for (const double v : values[b]) {
      std::snprintf(buf, sizeof buf, "%.12g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace tasknas
