#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tasknas/rng.hpp"
#include "tasknas/tensor.hpp"

namespace tasknas {

// Layer descriptions. Spatial layers use same padding: with stride 1 the
// output keeps the input's spatial extent, with stride s it is ceil(in / s).

struct DenseSpec {
  std::size_t units = 0;
};

struct Conv2dSpec {
  std::size_t out_channels = 0;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
};

/// Depthwise k x k convolution followed by a pointwise 1 x 1 convolution.
struct SeparableConv2dSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
};

struct MaxPool2dSpec {
  std::size_t kernel = 2;
  std::size_t stride = 2;
};

struct GlobalAvgPoolSpec {};
struct ReluSpec {};
struct FlattenSpec {};
struct SoftmaxOutputSpec {};

struct DagEdgeSpec;

/// A directed acyclic block: node 0 receives the block input, every other node
/// sums the outputs of its incoming edges, and the last node is the output.
/// Every edge must preserve the shape of its source node.
struct DagBlockSpec {
  std::size_t num_nodes = 2;
  std::vector<DagEdgeSpec> edges;
};

struct LayerSpec {
  std::variant<DenseSpec, Conv2dSpec, SeparableConv2dSpec, MaxPool2dSpec, GlobalAvgPoolSpec,
               ReluSpec, FlattenSpec, SoftmaxOutputSpec, DagBlockSpec>
      kind;
};

/// An edge with an empty op list is the identity.
struct DagEdgeSpec {
  std::size_t from = 0;
  std::size_t to = 1;
  std::vector<LayerSpec> ops;
};

std::string layer_kind_name(const LayerSpec& spec);

enum class WeightInit { uniform_scaled, normal_scaled };

struct Trace;

/// Per-layer forward state needed by the backward pass.
struct LayerScratch {
  std::vector<std::size_t> indices;
  std::vector<std::vector<double>> nodes;
  std::vector<Trace> edges;
};

/// Activations recorded by a forward pass: activations[0] is the input,
/// activations[i + 1] the output of layer i.
struct Trace {
  std::vector<std::vector<double>> activations;
  std::vector<LayerScratch> scratch;
};

class Layer {
 public:
  Layer(Shape input, Shape output) : input_(input), output_(output) {}
  virtual ~Layer() = default;

  const Shape& input_shape() const { return input_; }
  const Shape& output_shape() const { return output_; }

  virtual std::string name() const = 0;
  virtual std::size_t param_count() const { return 0; }
  virtual void init_params(std::span<double> /*params*/, Rng& /*rng*/, WeightInit /*init*/) const {}

  virtual void forward(std::span<const double> params, std::span<const double> in,
                       std::span<double> out, LayerScratch& scratch) const = 0;

  /// Writes dL/d(input) into grad_in (skipped when empty) and accumulates
  /// dL/d(params) into grad_params.
  virtual void backward(std::span<const double> params, std::span<const double> in,
                        std::span<const double> out, std::span<const double> grad_out,
                        const LayerScratch& scratch, std::span<double> grad_in,
                        std::span<double> grad_params) const = 0;

 private:
  Shape input_;
  Shape output_;
};

/// Builds the layer for a spec given its input shape. Throws ShapeError if the
/// spec cannot accept the shape.
std::shared_ptr<const Layer> make_layer(const LayerSpec& spec, const Shape& input);

/// Ordered stack of layers sharing one flat parameter vector.
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Shape& input, const std::vector<LayerSpec>& specs);

  const Shape& input_shape() const { return input_; }
  const Shape& output_shape() const { return output_; }
  std::size_t param_count() const { return param_count_; }
  std::size_t size() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }
  std::size_t param_offset(std::size_t i) const { return offsets_[i]; }

  void init_params(std::span<double> params, Rng& rng, WeightInit init) const;

  /// Runs layers [0, size()). Throws NumericalError naming the first layer that
  /// produces a non-finite activation.
  void forward(std::span<const double> params, std::span<const double> in, Trace& trace) const;

  /// Backpropagates from the gradient of the output of layer `last - 1`
  /// through layers [0, last).
  void backward(std::span<const double> params, const Trace& trace,
                std::span<const double> grad_out, std::span<double> grad_in,
                std::span<double> grad_params, std::size_t last) const;

  void backward(std::span<const double> params, const Trace& trace,
                std::span<const double> grad_out, std::span<double> grad_in,
                std::span<double> grad_params) const {
    backward(params, trace, grad_out, grad_in, grad_params, layers_.size());
  }

 private:
  Shape input_;
  Shape output_;
  std::vector<std::shared_ptr<const Layer>> layers_;
  std::vector<std::size_t> offsets_;
  std::size_t param_count_ = 0;
};

}  // namespace tasknas
