#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tasknas/layers.hpp"
#include "tasknas/tensor.hpp"

namespace tasknas {

/// Probabilities below this value are clamped before taking logs.
inline constexpr double kProbabilityFloor = 1e-12;

/// Contiguous slice of the flat parameter vector owned by one top-level layer.
struct ParamSlice {
  std::size_t layer = 0;
  std::size_t offset = 0;
  std::size_t count = 0;
};

/// Feed-forward network over a fixed layer list with a flat parameter vector.
/// Layer objects are immutable and shared between copies; copying a Network
/// copies its parameters.
class Network {
 public:
  Network() = default;
  Network(const Shape& input, std::vector<LayerSpec> specs);

  const Shape& input_shape() const { return body_.input_shape(); }
  const Shape& output_shape() const { return body_.output_shape(); }
  std::size_t num_outputs() const { return body_.output_shape().size(); }
  std::size_t param_count() const { return theta_.size(); }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  const Sequential& body() const { return body_; }
  bool has_softmax_output() const;

  std::span<double> theta() { return theta_; }
  std::span<const double> theta() const { return theta_; }
  void set_theta(std::vector<double> theta);

  /// Fresh weights from `seed`; biases start at zero.
  void init(std::uint64_t seed, WeightInit init = WeightInit::uniform_scaled);

  std::vector<ParamSlice> param_layout() const;

  void forward_trace(std::span<const double> sample, Trace& trace) const;
  std::span<const double> output(const Trace& trace) const { return trace.activations.back(); }

  /// Backpropagates a gradient with respect to the pre-softmax logits. Requires
  /// a softmax-output terminal layer. Accumulates into grad_params.
  void backward_from_logits(const Trace& trace, std::span<const double> grad_logits,
                            std::span<double> grad_params) const;

  /// Backpropagates a gradient with respect to the network output.
  void backward_from_output(const Trace& trace, std::span<const double> grad_output,
                            std::span<double> grad_params) const;

 private:
  std::vector<LayerSpec> specs_;
  Sequential body_;
  std::vector<double> theta_;
};

Network make_network(const Shape& input, std::vector<LayerSpec> specs, std::uint64_t seed,
                     WeightInit init = WeightInit::uniform_scaled);

/// Output rows for a batch whose leading dimension is the sample count. With a
/// softmax-output terminal layer every row is a probability vector.
Tensor forward(const Network& net, const Tensor& batch);

std::vector<double> forward_sample(const Network& net, std::span<const double> sample);

/// log p(label | sample), with p clamped at kProbabilityFloor.
double log_likelihood(const Network& net, std::span<const double> sample, std::size_t label);

/// Gradient of log p(label | sample) with respect to theta. Zero when the
/// probability sits below the clamp floor.
std::vector<double> loglik_grad(const Network& net, std::span<const double> sample, std::size_t label);

/// Gradient of log p(label) for a trace already produced by net.forward_trace.
void loglik_grad_from_trace(const Network& net, const Trace& trace, std::size_t label, std::span<double> grad);

/// Same as loglik_grad but reuses caller-provided buffers.
void loglik_grad_into(const Network& net, std::span<const double> sample, std::size_t label, Trace& trace,
                      std::span<double> grad);

namespace presets {

/// Desk-scale stand-in network: two conv/pool stages and a two-layer classifier.
std::vector<LayerSpec> small_convnet(std::size_t num_classes);

/// VGG-16 configuration for 3x32x32 inputs with a single dense classifier.
std::vector<LayerSpec> vgg16(std::size_t num_classes);

}  // namespace presets

}  // namespace tasknas
