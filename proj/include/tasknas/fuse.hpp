#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tasknas/fisher.hpp"
#include "tasknas/network.hpp"
#include "tasknas/search_space.hpp"
#include "tasknas/training.hpp"

namespace tasknas {

struct Candidate {
  ArchitectureSpec arch;
  Network net;
  std::string id;
};

/// Candidates under joint evaluation. The relaxed output is the convex
/// combination sum_c softmax(alpha)_c * c(x) of candidate probability rows.
struct CandidateSet {
  std::vector<Candidate> candidates;
  std::vector<double> alpha;

  /// Equal coefficients 1/|C| for every candidate.
  static CandidateSet uniform(std::vector<Candidate> candidates);

  std::vector<double> mixture_weights() const;
  std::size_t size() const { return candidates.size(); }
  void validate() const;
};

std::vector<double> softmax(std::span<const double> logits);

enum class SelectionRule { argmax, argmin };

std::string to_string(SelectionRule rule);
SelectionRule parse_selection_rule(const std::string& name);

struct FuseConfig {
  double w_lr = 0.05;
  double alpha_lr = 0.5;
  /// Per-candidate norm cap in weight phases, as TrainConfig::grad_clip.
  double grad_clip = 0.0;
  std::size_t batch_size = 32;
  std::size_t inner_epochs_per_phase = 1;
  double alpha_tol = 1e-3;
  std::size_t max_inner_iters = 50;
  std::uint64_t seed = 0;
  SelectionRule selection = SelectionRule::argmax;

  void validate() const;
};

Tensor relaxed_forward(const CandidateSet& set, const Tensor& batch);

/// Mean cross-entropy of the relaxed output.
double relaxed_loss(const CandidateSet& set, const LabeledDataset& data);

/// Per-sample gradients of -log cbar_y(x): one theta-sized vector per candidate
/// and one entry per alpha. Returns the loss.
double relaxed_loss_grad(const CandidateSet& set, std::span<const double> sample, std::size_t label,
                         std::vector<std::vector<double>>& weight_grads, std::vector<double>& alpha_grad);

/// One weight phase: minibatch SGD on the relaxed training loss over all
/// candidate parameters with alpha frozen. The data order comes from
/// `phase_seed`, so a single candidate follows train() exactly. Returns the
/// mean loss seen during the phase.
double fuse_step_weights(CandidateSet& set, const LabeledDataset& train_data, const FuseConfig& cfg,
                         std::uint64_t phase_seed);

/// One alpha phase: minibatch SGD on the relaxed validation loss with respect
/// to alpha only. Returns the mean loss seen during the phase.
double fuse_step_alpha(CandidateSet& set, const LabeledDataset& val_data, const FuseConfig& cfg,
                       std::uint64_t phase_seed);

std::size_t select_candidate(std::span<const double> alpha, SelectionRule rule);

struct FuseResult {
  std::size_t selected = 0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<std::vector<double>> alpha_history;
  std::vector<double> train_losses;
  std::vector<double> val_losses;
};

/// Alternates weight and alpha phases until max |delta alpha| < alpha_tol or
/// max_inner_iters is reached. Weight phase k uses seed cfg.seed + k.
FuseResult fuse(CandidateSet& set, const LabeledDataset& train_data, const LabeledDataset& val_data,
                const FuseConfig& cfg);

struct BaselineTask {
  TaskData data;
  Network net;
  ArchitectureSpec arch;
};

struct SearchConfig {
  DistanceConfig distance;
  FuseConfig fuse;
  /// Optional training of the final incumbent on its own; the result replaces
  /// the incumbent only if validation accuracy does not drop.
  TrainConfig final_train{.epochs = 0};
  std::size_t candidates = 5;
  std::size_t max_rounds = 10;
  /// Stop once the incumbent survives this many consecutive rounds.
  std::size_t patience = 3;
  /// Caps the training rows used by weight phases; 0 keeps them all.
  std::size_t search_train_limit = 0;
  std::uint64_t seed = 0;
  NetFactory target_factory = small_convnet_factory();

  void validate() const;
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::string> candidate_ids;
  std::vector<double> alpha;
  std::vector<double> mixture_weights;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::size_t inner_iterations = 0;
  std::string incumbent_id;
  bool incumbent_changed = true;
  double incumbent_val_accuracy = 0.0;
};

struct SearchState {
  std::size_t round = 0;
  std::optional<Candidate> incumbent;
  std::vector<RoundRecord> history;
  std::string stop_reason;
};

using RoundCallback = std::function<void(const RoundRecord&)>;

/// The outer loop: each round samples fresh candidates, runs fuse on them plus
/// the incumbent (which keeps its weights), and keeps the winner.
SearchState search_rounds(const SearchSpace& space, const TaskData& target, const SearchConfig& cfg,
                          std::optional<Candidate> incumbent = std::nullopt, const RoundCallback& on_round = {});

struct SearchResult {
  int closest_task = -1;
  std::vector<PipelineResult> distances;  ///< one per baseline, in input order
  SearchSpace space;
  Candidate best;
  double val_accuracy = 0.0;
  double majority_rate = 0.0;
  double target_net_accuracy = 0.0;
  std::size_t target_net_params = 0;
  SearchState state;
};

/// Distances from every baseline to the target, the closest epsilon-approximate
/// baseline's search space, then search_rounds and final training.
SearchResult nas_main(std::vector<BaselineTask>& baselines, const TaskData& target, const SearchConfig& cfg,
                      const RoundCallback& on_round = {});

struct RandomSearchResult {
  Candidate best;
  double val_accuracy = 0.0;
  std::size_t evaluated = 0;
};

/// Samples `count` architectures, trains each alone and keeps the best
/// validation accuracy.
RandomSearchResult random_search(const SearchSpace& space, std::size_t count, const TaskData& target,
                                 const TrainConfig& train_cfg, std::uint64_t seed);

/// Frequency of the most common label.
double majority_rate(const LabeledDataset& data);

}  // namespace tasknas
