#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tasknas/layers.hpp"
#include "tasknas/network.hpp"

namespace tasknas {

/// Shape-preserving cell operations.
enum class NasOperation { identity, sep_conv_3x3, conv_7x1_1x7, max_pool_3x3 };

std::string to_string(NasOperation op);
NasOperation parse_nas_operation(const std::string& name);
const std::vector<NasOperation>& all_nas_operations();

/// Layer stack realizing `op` on `channels` channels; empty for identity.
std::vector<LayerSpec> operation_layers(NasOperation op, std::size_t channels);

struct CellEdge {
  std::size_t from = 0;
  std::size_t to = 1;
  NasOperation op = NasOperation::identity;

  bool operator==(const CellEdge&) const = default;
};

/// Node 0 is the cell input; each later node sums its incoming edges and
/// the last node is the cell output.
struct CellSpec {
  std::size_t num_nodes = 4;
  std::vector<CellEdge> edges;

  /// Throws UsageError unless edges respect topological order, are unique, and
  /// every non-input node has an incoming edge.
  void validate() const;
  bool operator==(const CellSpec&) const = default;
};

struct SkeletonSpec {
  std::size_t stem_channels = 8;  ///< 0 disables the stem
  bool stem_pool = true;          ///< 2x2 max-pool after the stem
  std::size_t cell_count = 3;
  /// Cells preceded by a 2x2 max-pool and a 1x1 conv doubling the channels.
  std::vector<std::size_t> reduction_points{1};
  bool head = true;  ///< global average pool, dense classifier, softmax

  void validate() const;
  bool operator==(const SkeletonSpec&) const = default;
};

struct ArchitectureSpec {
  CellSpec cell;
  SkeletonSpec skeleton;
  std::size_t num_classes = 10;

  void validate() const;
  bool operator==(const ArchitectureSpec&) const = default;
};

struct SearchSpace {
  std::vector<NasOperation> allowed_operations;
  std::size_t cell_nodes = 4;
  SkeletonSpec skeleton;
  std::size_t num_classes = 10;
};

/// The complete 4-node cell using every operation once or more; the default
/// known architecture for baseline tasks.
ArchitectureSpec default_architecture(std::size_t num_classes);

/// Keeps the closest architecture's node count, operation set and skeleton.
SearchSpace derive_search_space(const ArchitectureSpec& closest, std::size_t num_classes);
SearchSpace derive_search_space(const ArchitectureSpec& closest);

/// Number of distinct cells in the space: the sum over valid wirings of
/// |ops|^(edge count).
std::uint64_t count_architectures(const SearchSpace& space);

/// Random wiring (each earlier node feeds a node with probability 1/2, at least
/// one input forced) and uniform per-edge operations. A duplicate of an earlier
/// candidate is resampled up to 10 times.
std::vector<ArchitectureSpec> sample_candidates(const SearchSpace& space, std::size_t count, std::uint64_t seed);

/// Stem, cells (with reductions) and head as a layer list.
std::vector<LayerSpec> architecture_layers(const ArchitectureSpec& arch, const Shape& input);

Network instantiate(const ArchitectureSpec& arch, const Shape& input, std::uint64_t seed,
                    WeightInit init = WeightInit::uniform_scaled);

std::size_t param_count(const ArchitectureSpec& arch, const Shape& input);

// Architecture JSON: {"nodes": 4, "edges": [[from, to, "op"], ...],
//   "skeleton": {"stem_channels", "stem_pool", "cell_count", "reduction_points", "head"},
//   "num_classes": k}
nlohmann::ordered_json architecture_to_json(const ArchitectureSpec& arch);
ArchitectureSpec architecture_from_json(const nlohmann::json& j);

}  // namespace tasknas
