#pragma once

// Reference computations shared by the unit tests and the acceptance binary.
// They deliberately avoid the library's own gradient plumbing where possible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tasknas/dataset.hpp"
#include "tasknas/fuse.hpp"
#include "tasknas/tasks.hpp"
#include "tasknas/network.hpp"
#include "tasknas/rng.hpp"
#include "tasknas/search_space.hpp"
#include "tasknas/training.hpp"

namespace tasknas::oracle {

/// Every layer kind plus every cell operation; the gradient suite cycles
/// through them so each one is the focus of some random net.
inline const std::vector<std::string>& focus_names() {
  static const std::vector<std::string> names{
      "dense",      "conv2d",          "separable_conv2d", "max_pool2d",   "global_avg_pool",
      "relu",       "flatten",         "softmax_output",   "dag_block",    "op:identity",
      "op:sep_conv_3x3", "op:conv_7x1_1x7", "op:max_pool_3x3"};
  return names;
}

struct GradCase {
  Network net;
  std::vector<double> sample;
  std::size_t label = 0;
  std::string focus;
};

inline std::vector<double> random_sample(Rng& rng, std::size_t n) {
  std::vector<double> s(n);
  for (double& v : s) v = rng.normal();
  return s;
}

/// A random small softmax network whose layers include `focus`.
inline GradCase random_grad_case(std::uint64_t seed, const std::string& focus, std::size_t max_params = 200) {
  Rng rng(seed);
  const auto& ops = all_nas_operations();
  for (;;) {
    std::vector<LayerSpec> specs;
    std::size_t channels = 1 + rng.index(2);
    const Shape input{channels, 3 + rng.index(4), 3 + rng.index(4)};

    const auto dag = [&](NasOperation must) {
      DagBlockSpec block;
      block.num_nodes = 3;
      const auto pick = [&] { return ops[rng.index(ops.size())]; };
      std::vector<NasOperation> edge_ops{must, pick(), pick()};
      std::swap(edge_ops[0], edge_ops[rng.index(3)]);
      block.edges.push_back({0, 1, operation_layers(edge_ops[0], channels)});
      block.edges.push_back({1, 2, operation_layers(edge_ops[1], channels)});
      if (rng.uniform() < 0.6) block.edges.push_back({0, 2, operation_layers(edge_ops[2], channels)});
      return LayerSpec{block};
    };
    const auto spatial = [&](const std::string& kind) {
      if (kind == "conv2d") {
        channels = 1 + rng.index(2);
        specs.push_back({Conv2dSpec{channels, 1 + rng.index(3), 1 + rng.index(3), 1 + rng.index(2)}});
      } else if (kind == "separable_conv2d") {
        channels = 1 + rng.index(2);
        specs.push_back({SeparableConv2dSpec{channels, rng.uniform() < 0.5 ? std::size_t{3} : std::size_t{1}}});
      } else if (kind == "max_pool2d") {
        specs.push_back({MaxPool2dSpec{2 + rng.index(2), 1 + rng.index(2)}});
      } else if (kind == "relu") {
        specs.push_back({ReluSpec{}});
      } else if (kind.rfind("op:", 0) == 0) {
        specs.push_back(dag(parse_nas_operation(kind.substr(3))));
      } else if (kind == "dag_block") {
        specs.push_back(dag(ops[rng.index(ops.size())]));
      }
    };

    static const std::vector<std::string> extras{"conv2d", "separable_conv2d", "max_pool2d", "relu", "dag_block"};
    const std::string extra = extras[rng.index(extras.size())];
    const bool extra_first = rng.uniform() < 0.5;
    if (extra_first && rng.uniform() < 0.7) spatial(extra);
    spatial(focus);
    if (!extra_first && rng.uniform() < 0.7) spatial(extra);

    const bool gap = focus == "global_avg_pool" || (focus != "flatten" && rng.uniform() < 0.4);
    specs.push_back(gap ? LayerSpec{GlobalAvgPoolSpec{}} : LayerSpec{FlattenSpec{}});
    if (focus == "dense" || rng.uniform() < 0.5) {
      specs.push_back({DenseSpec{2 + rng.index(3)}});
      if (rng.uniform() < 0.5) specs.push_back({ReluSpec{}});
    }
    const std::size_t classes = 2 + rng.index(2);
    specs.push_back({DenseSpec{classes}});
    specs.push_back({SoftmaxOutputSpec{}});

    const WeightInit init = rng.uniform() < 0.5 ? WeightInit::uniform_scaled : WeightInit::normal_scaled;
    Network net = make_network(input, std::move(specs), rng.next(), init);
    if (net.param_count() == 0 || net.param_count() > max_params) continue;
    GradCase c{std::move(net), {}, rng.index(classes), focus};
    c.sample = random_sample(rng, input.size());
    return c;
  }
}

struct GradCheck {
  double rel_error = 0.0;
  bool kink = false;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Central differences of log p(label) with step h, compared to loglik_grad as
/// ||a - n|| / max(||a||, ||n||). When the check fails, `kink` reports whether
/// some coordinate shows a derivative jump (one-sided differences whose gap
/// does not shrink linearly with the step), i.e. a ReLU or max-pool switch
/// within h of theta.
inline GradCheck check_gradient(const Network& net, const std::vector<double>& sample, std::size_t label,
                                double h = 1e-4, double tolerance = 1e-4) {
  GradCheck out;
  out.analytic = loglik_grad(net, sample, label);
  Network probe = net;
  auto theta = probe.theta();
  const auto f = [&] { return log_likelihood(probe, sample, label); };
  const double f0 = f();
  const std::size_t n = theta.size();
  out.numeric.resize(n);
  std::vector<double> plus(n), minus(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    plus[i] = f();
    theta[i] = saved - h;
    minus[i] = f();
    theta[i] = saved;
    out.numeric[i] = (plus[i] - minus[i]) / (2.0 * h);
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    diff += (out.analytic[i] - out.numeric[i]) * (out.analytic[i] - out.numeric[i]);
    na += out.analytic[i] * out.analytic[i];
    nn += out.numeric[i] * out.numeric[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  out.rel_error = scale < 1e-300 ? 0.0 : std::sqrt(diff) / scale;
  if (out.rel_error < tolerance) return out;

  for (std::size_t i = 0; i < n && !out.kink; ++i) {
    const double saved = theta[i];
    theta[i] = saved + h / 2;
    const double hp = f();
    theta[i] = saved - h / 2;
    const double hm = f();
    theta[i] = saved;
    const double gap_h = (plus[i] - f0) / h - (f0 - minus[i]) / h;
    const double gap_half = (hp - f0) / (h / 2) - (f0 - hm) / (h / 2);
    if (std::abs(gap_h) > 1e-7 && std::abs(gap_h - 2.0 * gap_half) > 0.5 * std::abs(gap_h)) out.kink = true;
  }
  return out;
}

/// (1/M) sum_i g_i g_i^T formed explicitly; returns its diagonal. Uses every
/// sample of `data` with its true label.
inline std::vector<double> brute_fisher_diag(const Network& net, const LabeledDataset& data) {
  const std::size_t n = net.param_count();
  std::vector<double> full(n * n, 0.0);
  std::vector<double> sample;
  for (std::size_t i = 0; i < data.size(); ++i) {
    data.copy_sample(i, sample);
    const auto g = loglik_grad(net, sample, data.labels[i]);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) full[a * n + b] += g[a] * g[b];
  }
  std::vector<double> diag(n);
  for (std::size_t a = 0; a < n; ++a) diag[a] = full[a * n + a] / static_cast<double>(data.size());
  return diag;
}

/// Random real-valued dataset with labels drawn uniformly.
inline LabeledDataset random_dataset(Rng& rng, const Shape& shape, std::size_t count, std::size_t classes) {
  LabeledDataset d;
  d.sample_shape = shape;
  d.num_classes = classes;
  d.pixels.resize(count * shape.size());
  d.labels.resize(count);
  for (float& p : d.pixels) p = static_cast<float>(rng.normal());
  for (auto& y : d.labels) y = rng.index(classes);
  return d;
}

/// Two-class 3x8x8 images: class 0 has bright even rows, class 1 bright even
/// columns, with Gaussian noise everywhere. Global pooling keeps the texture.
inline LabeledDataset toy_stripes(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  LabeledDataset d;
  d.sample_shape = {3, 8, 8};
  d.num_classes = 2;
  d.pixels.resize(count * d.sample_shape.size());
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t y = rng.index(2);
    d.labels[i] = y;
    auto img = d.image(i);
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c) {
          const bool lit = ((y == 0 ? r : c) % 2) == 0;
          img[ch * 64 + r * 8 + c] = static_cast<float>((lit ? 0.8 : 0.2) + 0.3 * rng.normal());
        }
  }
  return d;
}

/// Small cell space for 3x8x8 inputs: 4-channel stem, one cell, no reduction.
inline SearchSpace toy_space(std::size_t num_classes = 2) {
  ArchitectureSpec closest = default_architecture(num_classes);
  closest.skeleton.stem_channels = 4;
  closest.skeleton.stem_pool = false;
  closest.skeleton.cell_count = 1;
  closest.skeleton.reduction_points = {};
  return derive_search_space(closest, num_classes);
}

/// A cell network from toy_space trained until it separates toy_stripes.
inline Candidate perfect_toy_candidate(const LabeledDataset& train_data) {
  ArchitectureSpec arch = sample_candidates(toy_space(), 1, 2024).front();
  Candidate c{arch, instantiate(arch, train_data.sample_shape, 1), "perfect"};
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 0.2;
  cfg.seed = 5;
  train(c.net, train_data, cfg);
  return c;
}

struct RiggedOutcome {
  std::size_t perfect_index = 0;
  std::size_t selected = 0;
  FuseResult result;
};

/// Hides a pre-trained candidate among four freshly initialized ones at a
/// seed-dependent position and runs fuse.
inline RiggedOutcome rigged_fuse_run(const Candidate& perfect, const DatasetSplit& data, std::uint64_t seed,
                                     std::size_t iterations = 5) {
  Rng rng(seed);
  std::vector<Candidate> members;
  const auto archs = sample_candidates(toy_space(), 4, seed);
  for (std::size_t i = 0; i < archs.size(); ++i)
    members.push_back({archs[i], instantiate(archs[i], data.train.sample_shape, mix_seed(seed, i)),
                       "random" + std::to_string(i)});
  RiggedOutcome out;
  out.perfect_index = rng.index(members.size() + 1);
  members.insert(members.begin() + static_cast<std::ptrdiff_t>(out.perfect_index), perfect);
  CandidateSet set = CandidateSet::uniform(std::move(members));
  FuseConfig cfg;
  cfg.seed = seed;
  cfg.max_inner_iters = iterations;
  out.result = fuse(set, data.train, data.val, cfg);
  out.selected = out.result.selected;
  return out;
}

}  // namespace tasknas::oracle
