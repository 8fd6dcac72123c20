#include "tasknas/search_space.hpp"

#include <algorithm>
#include <set>

#include "tasknas/errors.hpp"
#include "tasknas/rng.hpp"

namespace tasknas {

std::string to_string(NasOperation op) {
  switch (op) {
    case NasOperation::identity: return "identity";
    case NasOperation::sep_conv_3x3: return "sep_conv_3x3";
    case NasOperation::conv_7x1_1x7: return "conv_7x1_1x7";
    case NasOperation::max_pool_3x3: return "max_pool_3x3";
  }
  return "identity";
}

NasOperation parse_nas_operation(const std::string& name) {
  for (const NasOperation op : all_nas_operations())
    if (to_string(op) == name) return op;
  throw UsageError("unknown operation '" + name + "'");
}

const std::vector<NasOperation>& all_nas_operations() {
  static const std::vector<NasOperation> ops = {NasOperation::identity, NasOperation::sep_conv_3x3,
                                                NasOperation::conv_7x1_1x7, NasOperation::max_pool_3x3};
  return ops;
}

std::vector<LayerSpec> operation_layers(NasOperation op, std::size_t channels) {
  switch (op) {
    case NasOperation::identity: return {};
    case NasOperation::sep_conv_3x3: return {{ReluSpec{}}, {SeparableConv2dSpec{channels, 3}}};
    case NasOperation::conv_7x1_1x7:
      return {{ReluSpec{}}, {Conv2dSpec{channels, 7, 1, 1}}, {Conv2dSpec{channels, 1, 7, 1}}};
    case NasOperation::max_pool_3x3: return {{MaxPool2dSpec{3, 1}}};
  }
  return {};
}

void CellSpec::validate() const {
  if (num_nodes < 2) throw UsageError("a cell needs at least 2 nodes");
  std::vector<bool> has_input(num_nodes, false);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& e : edges) {
    if (!(e.from < e.to) || e.to >= num_nodes)
      throw UsageError("cell edge " + std::to_string(e.from) + "->" + std::to_string(e.to) + " is not forward");
    if (!seen.insert({e.from, e.to}).second)
      throw UsageError("duplicate cell edge " + std::to_string(e.from) + "->" + std::to_string(e.to));
    has_input[e.to] = true;
  }
  for (std::size_t j = 1; j < num_nodes; ++j)
    if (!has_input[j]) throw UsageError("cell node " + std::to_string(j) + " has no incoming edge");
}

void SkeletonSpec::validate() const {
  for (const std::size_t r : reduction_points)
    if (r >= cell_count) throw UsageError("reduction point " + std::to_string(r) + " outside the cell range");
}

void ArchitectureSpec::validate() const {
  cell.validate();
  skeleton.validate();
  if (num_classes == 0) throw UsageError("architecture needs at least one class");
}

ArchitectureSpec default_architecture(std::size_t num_classes) {
  ArchitectureSpec arch;
  arch.num_classes = num_classes;
  arch.cell.num_nodes = 4;
  arch.cell.edges = {
      {0, 1, NasOperation::sep_conv_3x3}, {0, 2, NasOperation::identity},     {1, 2, NasOperation::max_pool_3x3},
      {0, 3, NasOperation::conv_7x1_1x7}, {1, 3, NasOperation::identity},     {2, 3, NasOperation::sep_conv_3x3},
  };
  return arch;
}

SearchSpace derive_search_space(const ArchitectureSpec& closest, std::size_t num_classes) {
  closest.validate();
  SearchSpace space;
  for (const NasOperation op : all_nas_operations()) {
    const bool used = std::any_of(closest.cell.edges.begin(), closest.cell.edges.end(),
                                  [&](const CellEdge& e) { return e.op == op; });
    if (used) space.allowed_operations.push_back(op);
  }
  space.cell_nodes = closest.cell.num_nodes;
  space.skeleton = closest.skeleton;
  space.num_classes = num_classes;
  return space;
}

SearchSpace derive_search_space(const ArchitectureSpec& closest) {
  return derive_search_space(closest, closest.num_classes);
}

std::uint64_t count_architectures(const SearchSpace& space) {
  // Node j chooses a nonempty subset of its j predecessors; sum ops^edges over
  // all choices by dynamic programming on the total edge count.
  const std::uint64_t ops = space.allowed_operations.size();
  std::vector<std::uint64_t> by_edges{1};
  for (std::size_t j = 1; j < space.cell_nodes; ++j) {
    std::vector<std::uint64_t> next(by_edges.size() + j, 0);
    std::vector<std::uint64_t> binom(j + 1, 1);
    for (std::size_t k = 1; k <= j; ++k) binom[k] = binom[k - 1] * (j - k + 1) / k;
    for (std::size_t e = 0; e < by_edges.size(); ++e)
      for (std::size_t k = 1; k <= j; ++k) next[e + k] += by_edges[e] * binom[k];
    by_edges = std::move(next);
  }
  std::uint64_t total = 0;
  std::uint64_t power = 1;
  for (std::size_t e = 0; e < by_edges.size(); ++e) {
    total += by_edges[e] * power;
    power *= ops;
  }
  return total;
}

namespace {

ArchitectureSpec sample_one(const SearchSpace& space, Rng& rng) {
  ArchitectureSpec arch;
  arch.skeleton = space.skeleton;
  arch.num_classes = space.num_classes;
  arch.cell.num_nodes = space.cell_nodes;
  const auto& ops = space.allowed_operations;
  for (std::size_t j = 1; j < space.cell_nodes; ++j) {
    std::vector<std::size_t> sources;
    for (std::size_t i = 0; i < j; ++i)
      if (rng.uniform() < 0.5) sources.push_back(i);
    if (sources.empty()) sources.push_back(rng.index(j));
    for (const std::size_t i : sources) arch.cell.edges.push_back({i, j, ops[rng.index(ops.size())]});
  }
  return arch;
}

}  // namespace

std::vector<ArchitectureSpec> sample_candidates(const SearchSpace& space, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw UsageError("candidate count must be at least 1");
  if (space.allowed_operations.empty()) throw UsageError("search space has no operations");
  if (space.cell_nodes < 2) throw UsageError("search space cells need at least 2 nodes");
  Rng rng(seed);
  std::vector<ArchitectureSpec> out;
  for (std::size_t c = 0; c < count; ++c) {
    ArchitectureSpec arch = sample_one(space, rng);
    for (int attempt = 0; attempt < 10 && std::find(out.begin(), out.end(), arch) != out.end(); ++attempt)
      arch = sample_one(space, rng);
    out.push_back(std::move(arch));
  }
  return out;
}

std::vector<LayerSpec> architecture_layers(const ArchitectureSpec& arch, const Shape& input) {
  arch.validate();
  std::vector<LayerSpec> layers;
  std::size_t channels = input.channels;
  if (arch.skeleton.stem_channels > 0) {
    channels = arch.skeleton.stem_channels;
    layers.push_back({Conv2dSpec{channels, 3, 3, 1}});
    layers.push_back({ReluSpec{}});
    if (arch.skeleton.stem_pool) layers.push_back({MaxPool2dSpec{2, 2}});
  }
  const auto& reductions = arch.skeleton.reduction_points;
  for (std::size_t i = 0; i < arch.skeleton.cell_count; ++i) {
    if (std::find(reductions.begin(), reductions.end(), i) != reductions.end()) {
      layers.push_back({MaxPool2dSpec{2, 2}});
      channels *= 2;
      layers.push_back({Conv2dSpec{channels, 1, 1, 1}});
    }
    DagBlockSpec block;
    block.num_nodes = arch.cell.num_nodes;
    for (const auto& e : arch.cell.edges) block.edges.push_back({e.from, e.to, operation_layers(e.op, channels)});
    layers.push_back({block});
  }
  if (arch.skeleton.head) {
    layers.push_back({GlobalAvgPoolSpec{}});
    layers.push_back({FlattenSpec{}});
    layers.push_back({DenseSpec{arch.num_classes}});
    layers.push_back({SoftmaxOutputSpec{}});
  }
  return layers;
}

Network instantiate(const ArchitectureSpec& arch, const Shape& input, std::uint64_t seed, WeightInit init) {
  return make_network(input, architecture_layers(arch, input), seed, init);
}

std::size_t param_count(const ArchitectureSpec& arch, const Shape& input) {
  return Sequential(input, architecture_layers(arch, input)).param_count();
}

nlohmann::ordered_json architecture_to_json(const ArchitectureSpec& arch) {
  nlohmann::ordered_json edges = nlohmann::ordered_json::array();
  for (const auto& e : arch.cell.edges) edges.push_back({e.from, e.to, to_string(e.op)});
  nlohmann::ordered_json skeleton;
  skeleton["stem_channels"] = arch.skeleton.stem_channels;
  skeleton["stem_pool"] = arch.skeleton.stem_pool;
  skeleton["cell_count"] = arch.skeleton.cell_count;
  skeleton["reduction_points"] = arch.skeleton.reduction_points;
  skeleton["head"] = arch.skeleton.head;
  nlohmann::ordered_json j;
  j["nodes"] = arch.cell.num_nodes;
  j["edges"] = edges;
  j["skeleton"] = skeleton;
  j["num_classes"] = arch.num_classes;
  return j;
}

ArchitectureSpec architecture_from_json(const nlohmann::json& j) {
  try {
    ArchitectureSpec arch;
    arch.cell.num_nodes = j.at("nodes").get<std::size_t>();
    for (const auto& e : j.at("edges"))
      arch.cell.edges.push_back(
          {e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(), parse_nas_operation(e.at(2).get<std::string>())});
    const auto& s = j.at("skeleton");
    arch.skeleton.stem_channels = s.at("stem_channels").get<std::size_t>();
    arch.skeleton.stem_pool = s.value("stem_pool", true);
    arch.skeleton.cell_count = s.at("cell_count").get<std::size_t>();
    arch.skeleton.reduction_points = s.at("reduction_points").get<std::vector<std::size_t>>();
    arch.skeleton.head = s.value("head", true);
    arch.num_classes = j.at("num_classes").get<std::size_t>();
    arch.validate();
    return arch;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed architecture JSON: ") + e.what());
  }
}

}  // namespace tasknas
