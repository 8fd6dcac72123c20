#include "tasknas/fuse.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "tasknas/errors.hpp"
#include "tasknas/rng.hpp"

namespace tasknas {

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

CandidateSet CandidateSet::uniform(std::vector<Candidate> candidates) {
  CandidateSet set;
  const double init = candidates.empty() ? 0.0 : 1.0 / static_cast<double>(candidates.size());
  set.alpha.assign(candidates.size(), init);
  set.candidates = std::move(candidates);
  return set;
}

std::vector<double> CandidateSet::mixture_weights() const { return softmax(alpha); }

void CandidateSet::validate() const {
  if (candidates.empty()) throw UsageError("candidate set is empty");
  if (alpha.size() != candidates.size()) throw UsageError("alpha length does not match candidate count");
  const std::size_t arity = candidates.front().net.num_outputs();
  for (const auto& c : candidates) {
    if (!c.net.has_softmax_output()) throw UsageError("candidate " + c.id + " lacks a softmax output");
    if (c.net.num_outputs() != arity) throw ShapeError("candidate " + c.id + " output arity differs");
    if (!(c.net.input_shape() == candidates.front().net.input_shape()))
      throw ShapeError("candidate " + c.id + " input shape differs");
  }
}

std::string to_string(SelectionRule rule) { return rule == SelectionRule::argmax ? "argmax" : "argmin"; }

SelectionRule parse_selection_rule(const std::string& name) {
  if (name == "argmax") return SelectionRule::argmax;
  if (name == "argmin") return SelectionRule::argmin;
  throw UsageError("unknown selection rule '" + name + "'");
}

void FuseConfig::validate() const {
  if (!(w_lr > 0.0) || !(alpha_lr > 0.0)) throw UsageError("fuse learning rates must be positive");
  if (batch_size == 0 || inner_epochs_per_phase == 0 || max_inner_iters == 0)
    throw UsageError("fuse batch size, epochs per phase and max iterations must be positive");
  if (!(alpha_tol > 0.0)) throw UsageError("alpha_tol must be positive");
  if (!(grad_clip >= 0.0)) throw UsageError("grad_clip must be nonnegative");
}

Tensor relaxed_forward(const CandidateSet& set, const Tensor& batch) {
  set.validate();
  const auto w = set.mixture_weights();
  Tensor out({batch.rows(), set.candidates.front().net.num_outputs()});
  for (std::size_t c = 0; c < set.size(); ++c) {
    const Tensor p = forward(set.candidates[c].net, batch);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += w[c] * p.data[i];
  }
  return out;
}

namespace {

struct Workspace {
  std::vector<Trace> traces;
  std::vector<double> glogits;
  std::vector<double> sample;
};

// Accumulates per-candidate weight gradients of -log cbar_y into `grads`.
double accumulate_weight_grads(const CandidateSet& set, std::span<const double> w, std::span<const double> sample,
                               std::size_t label, Workspace& ws, std::vector<std::vector<double>>& grads,
                               std::vector<double>* alpha_grad) {
  const std::size_t C = set.size();
  ws.traces.resize(C);
  double cbar = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    set.candidates[c].net.forward_trace(sample, ws.traces[c]);
    cbar += w[c] * set.candidates[c].net.output(ws.traces[c])[label];
  }
  const double loss = -std::log(std::max(cbar, kProbabilityFloor));
  if (cbar < kProbabilityFloor) return loss;
  for (std::size_t c = 0; c < C; ++c) {
    const Network& net = set.candidates[c].net;
    const auto p = net.output(ws.traces[c]);
    const double coeff = (w[c] * p[label]) / cbar;
    if (alpha_grad != nullptr) (*alpha_grad)[c] += w[c] * (1.0 - p[label] / cbar);
    ws.glogits.resize(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) ws.glogits[k] = (p[k] - (k == label ? 1.0 : 0.0)) * coeff;
    net.backward_from_logits(ws.traces[c], ws.glogits, grads[c]);
  }
  return loss;
}

void check_finite(const CandidateSet& set, double loss, const char* phase) {
  if (!std::isfinite(loss)) throw NumericalError(std::string("fuse ") + phase + " phase diverged");
  for (const double a : set.alpha)
    if (!std::isfinite(a)) throw NumericalError(std::string("fuse ") + phase + " phase produced non-finite alpha");
  for (const auto& c : set.candidates)
    for (const double v : c.net.theta())
      if (!std::isfinite(v)) throw NumericalError(std::string("fuse ") + phase + " phase diverged");
}

void check_data(const CandidateSet& set, const LabeledDataset& data) {
  if (data.empty()) throw DataError("fuse phase needs a nonempty dataset");
  if (data.sample_shape.size() != set.candidates.front().net.input_shape().size())
    throw ShapeError("dataset samples do not match candidate inputs");
  for (const std::size_t y : data.labels)
    if (y >= set.candidates.front().net.num_outputs()) throw DataError("label exceeds candidate output arity");
}

}  // namespace

double relaxed_loss_grad(const CandidateSet& set, std::span<const double> sample, std::size_t label,
                         std::vector<std::vector<double>>& weight_grads, std::vector<double>& alpha_grad) {
  set.validate();
  weight_grads.resize(set.size());
  for (std::size_t c = 0; c < set.size(); ++c) weight_grads[c].assign(set.candidates[c].net.param_count(), 0.0);
  alpha_grad.assign(set.size(), 0.0);
  Workspace ws;
  const auto w = set.mixture_weights();
  return accumulate_weight_grads(set, w, sample, label, ws, weight_grads, &alpha_grad);
}

double relaxed_loss(const CandidateSet& set, const LabeledDataset& data) {
  set.validate();
  check_data(set, data);
  const auto w = set.mixture_weights();
  std::vector<double> sample;
  Trace trace;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    data.copy_sample(i, sample);
    double cbar = 0.0;
    for (std::size_t c = 0; c < set.size(); ++c) {
      set.candidates[c].net.forward_trace(sample, trace);
      cbar += w[c] * set.candidates[c].net.output(trace)[data.labels[i]];
    }
    total -= std::log(std::max(cbar, kProbabilityFloor));
  }
  return total / static_cast<double>(data.size());
}

double fuse_step_weights(CandidateSet& set, const LabeledDataset& train_data, const FuseConfig& cfg,
                         std::uint64_t phase_seed) {
  set.validate();
  cfg.validate();
  check_data(set, train_data);
  const auto w = set.mixture_weights();
  std::vector<std::vector<double>> grads(set.size());
  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(phase_seed);
  Workspace ws;
  double loss_sum = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.inner_epochs_per_phase; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t c = 0; c < set.size(); ++c) grads[c].assign(set.candidates[c].net.param_count(), 0.0);
      for (std::size_t k = start; k < stop; ++k) {
        train_data.copy_sample(order[k], ws.sample);
        loss_sum += accumulate_weight_grads(set, w, ws.sample, train_data.labels[order[k]], ws, grads, nullptr);
      }
      for (std::size_t c = 0; c < set.size(); ++c)
        apply_sgd(set.candidates[c].net.theta(), grads[c], cfg.w_lr, stop - start, cfg.grad_clip);
    }
  }
  const double mean = loss_sum / static_cast<double>(order.size() * cfg.inner_epochs_per_phase);
  check_finite(set, mean, "weight");
  return mean;
}

double fuse_step_alpha(CandidateSet& set, const LabeledDataset& val_data, const FuseConfig& cfg,
                       std::uint64_t phase_seed) {
  set.validate();
  cfg.validate();
  check_data(set, val_data);
  const std::size_t C = set.size();
  const std::size_t N = val_data.size();
  // Weights are frozen, so each candidate's true-label probability is fixed.
  std::vector<double> p(C * N);
  std::vector<double> sample;
  Trace trace;
  for (std::size_t i = 0; i < N; ++i) {
    val_data.copy_sample(i, sample);
    for (std::size_t c = 0; c < C; ++c) {
      set.candidates[c].net.forward_trace(sample, trace);
      p[i * C + c] = set.candidates[c].net.output(trace)[val_data.labels[i]];
    }
  }

  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(phase_seed);
  std::vector<double> grad(C);
  double loss_sum = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.inner_epochs_per_phase; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < N; start += cfg.batch_size) {
      const std::size_t stop = std::min(N, start + cfg.batch_size);
      const auto w = set.mixture_weights();
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t k = start; k < stop; ++k) {
        const double* pi = p.data() + order[k] * C;
        double cbar = 0.0;
        for (std::size_t c = 0; c < C; ++c) cbar += w[c] * pi[c];
        loss_sum -= std::log(std::max(cbar, kProbabilityFloor));
        if (cbar < kProbabilityFloor) continue;
        for (std::size_t c = 0; c < C; ++c) grad[c] += w[c] * (1.0 - pi[c] / cbar);
      }
      apply_sgd(set.alpha, grad, cfg.alpha_lr, stop - start);
    }
  }
  const double mean = loss_sum / static_cast<double>(N * cfg.inner_epochs_per_phase);
  check_finite(set, mean, "alpha");
  return mean;
}

std::size_t select_candidate(std::span<const double> alpha, SelectionRule rule) {
  if (alpha.empty()) throw UsageError("no candidates to select from");
  std::size_t best = 0;
  for (std::size_t c = 1; c < alpha.size(); ++c) {
    const bool better = rule == SelectionRule::argmax ? alpha[c] > alpha[best] : alpha[c] < alpha[best];
    if (better) best = c;
  }
  return best;
}

FuseResult fuse(CandidateSet& set, const LabeledDataset& train_data, const LabeledDataset& val_data,
                const FuseConfig& cfg) {
  set.validate();
  cfg.validate();
  FuseResult result;
  result.alpha_history.push_back(set.alpha);
  for (std::size_t k = 0; k < cfg.max_inner_iters; ++k) {
    const std::vector<double> before = set.alpha;
    result.train_losses.push_back(fuse_step_weights(set, train_data, cfg, cfg.seed + k));
    result.val_losses.push_back(fuse_step_alpha(set, val_data, cfg, mix_seed(cfg.seed + k, 0xA1)));
    result.alpha_history.push_back(set.alpha);
    result.iterations = k + 1;
    double delta = 0.0;
    for (std::size_t c = 0; c < set.size(); ++c) delta = std::max(delta, std::abs(set.alpha[c] - before[c]));
    if (delta < cfg.alpha_tol) {
      result.converged = true;
      break;
    }
  }
  result.selected = select_candidate(set.alpha, cfg.selection);
  return result;
}

void SearchConfig::validate() const {
  distance.validate();
  fuse.validate();
  if (candidates == 0) throw UsageError("candidate count must be at least 1");
  if (max_rounds == 0) throw UsageError("max_rounds must be at least 1");
  if (patience == 0) throw UsageError("patience must be at least 1");
}

double majority_rate(const LabeledDataset& data) {
  if (data.empty()) throw DataError("empty dataset");
  const auto counts = class_counts(data);
  return static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(data.size());
}

SearchState search_rounds(const SearchSpace& space, const TaskData& target, const SearchConfig& cfg,
                          std::optional<Candidate> incumbent, const RoundCallback& on_round) {
  cfg.validate();
  const Shape input = target.data.train.sample_shape;
  SearchState state;
  state.incumbent = std::move(incumbent);
  std::size_t unchanged = 0;
  double previous_accuracy = -1.0;
  LabeledDataset limited;
  const LabeledDataset* search_train = &target.data.train;
  if (cfg.search_train_limit > 0 && cfg.search_train_limit < target.data.train.size()) {
    std::vector<std::size_t> rows(cfg.search_train_limit);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    limited = target.data.train.subset(rows);
    search_train = &limited;
  }

  for (std::size_t round = 1; round <= cfg.max_rounds; ++round) {
    const std::uint64_t round_seed = mix_seed(cfg.seed, round);
    const auto archs = sample_candidates(space, cfg.candidates, round_seed);
    std::vector<Candidate> members;
    const bool had_incumbent = state.incumbent.has_value();
    if (had_incumbent) members.push_back(std::move(*state.incumbent));
    for (std::size_t c = 0; c < archs.size(); ++c) {
      members.push_back({archs[c], instantiate(archs[c], input, mix_seed(round_seed, c + 1)),
                         "r" + std::to_string(round) + "c" + std::to_string(c)});
    }
    CandidateSet set = CandidateSet::uniform(std::move(members));
    FuseConfig fc = cfg.fuse;
    fc.seed = round_seed;
    const FuseResult fr = fuse(set, *search_train, target.data.val, fc);

    const bool changed = !(had_incumbent && fr.selected == 0);
    unchanged = changed ? 0 : unchanged + 1;

    RoundRecord rec;
    rec.round = round;
    for (const auto& c : set.candidates) rec.candidate_ids.push_back(c.id);
    rec.alpha = set.alpha;
    rec.mixture_weights = set.mixture_weights();
    rec.train_loss = fr.train_losses.back();
    rec.val_loss = fr.val_losses.back();
    rec.inner_iterations = fr.iterations;
    rec.incumbent_changed = changed;
    state.incumbent = std::move(set.candidates[fr.selected]);
    rec.incumbent_id = state.incumbent->id;
    rec.incumbent_val_accuracy = evaluate(state.incumbent->net, target.data.val);
    if (previous_accuracy >= 0.0 && rec.incumbent_val_accuracy < previous_accuracy - 0.01) {
      std::clog << "note: incumbent validation accuracy dropped from " << previous_accuracy << " to "
                << rec.incumbent_val_accuracy << " in round " << round << "\n";
    }
    previous_accuracy = rec.incumbent_val_accuracy;
    state.round = round;
    state.history.push_back(rec);
    if (on_round) on_round(rec);
    if (unchanged >= cfg.patience) {
      state.stop_reason = "incumbent-converged";
      break;
    }
  }
  if (state.stop_reason.empty()) state.stop_reason = "round-limit";
  return state;
}

SearchResult nas_main(std::vector<BaselineTask>& baselines, const TaskData& target, const SearchConfig& cfg,
                      const RoundCallback& on_round) {
  cfg.validate();
  if (baselines.empty()) throw UsageError("nas_main needs at least one baseline task");
  const Shape input = target.data.train.sample_shape;

  SearchResult result;
  const std::uint64_t target_seed = mix_seed(cfg.seed, 0x7a26e7);
  Network net_t = cfg.target_factory(target.task, input, target_seed);
  TrainConfig tc = cfg.distance.train;
  tc.seed = mix_seed(target_seed, 0x7a1);
  train(net_t, target.data.train, tc);
  result.target_net_accuracy = evaluate(net_t, target.data.val);
  result.target_net_params = net_t.param_count();

  std::size_t best = baselines.size();
  for (std::size_t b = 0; b < baselines.size(); ++b) {
    PipelineResult pr = distance_pipeline(baselines[b].data, target, baselines[b].net, net_t, cfg.distance, false);
    if (pr.baseline_is_approx && (best == baselines.size() || pr.entry.value < result.distances[best].entry.value))
      best = b;
    result.distances.push_back(std::move(pr));
  }
  if (best == baselines.size())
    throw DataError("no baseline network meets the epsilon-approximation criterion");
  result.closest_task = baselines[best].data.task.id;

  result.space = derive_search_space(baselines[best].arch, target.task.num_classes);
  result.state = search_rounds(result.space, target, cfg, std::nullopt, on_round);
  result.best = *result.state.incumbent;
  result.val_accuracy = evaluate(result.best.net, target.data.val);
  if (cfg.final_train.epochs > 0) {
    // Plain SGD from mixture-trained weights sometimes falls back to the
    // majority class; keep the incumbent weights when that happens.
    Network retrained = result.best.net;
    train(retrained, target.data.train, cfg.final_train);
    const double acc = evaluate(retrained, target.data.val);
    if (acc >= result.val_accuracy) {
      result.best.net = std::move(retrained);
      result.val_accuracy = acc;
    } else {
      std::clog << "final training lowered validation accuracy to " << acc << "; keeping incumbent weights\n";
    }
  }
  result.majority_rate = majority_rate(target.data.val);
  return result;
}

RandomSearchResult random_search(const SearchSpace& space, std::size_t count, const TaskData& target,
                                 const TrainConfig& train_cfg, std::uint64_t seed) {
  const Shape input = target.data.train.sample_shape;
  const auto archs = sample_candidates(space, count, seed);
  RandomSearchResult result;
  for (std::size_t i = 0; i < archs.size(); ++i) {
    Candidate cand{archs[i], instantiate(archs[i], input, mix_seed(seed, i + 1)), "rs" + std::to_string(i)};
    TrainConfig tc = train_cfg;
    tc.seed = mix_seed(seed, 100 + i);
    train(cand.net, target.data.train, tc);
    const double acc = evaluate(cand.net, target.data.val);
    if (result.evaluated == 0 || acc > result.val_accuracy) {
      result.val_accuracy = acc;
      result.best = std::move(cand);
    }
    ++result.evaluated;
  }
  return result;
}

}  // namespace tasknas
