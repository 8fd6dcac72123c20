#include "tasknas/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tasknas/errors.hpp"
#include "tasknas/rng.hpp"

namespace tasknas {

Network::Network(const Shape& input, std::vector<LayerSpec> specs)
    : specs_(std::move(specs)), body_(input, specs_), theta_(body_.param_count(), 0.0) {}

bool Network::has_softmax_output() const {
  return !specs_.empty() && std::holds_alternative<SoftmaxOutputSpec>(specs_.back().kind);
}

void Network::set_theta(std::vector<double> theta) {
  if (theta.size() != theta_.size()) {
    throw ShapeError("parameter vector of length " + std::to_string(theta.size()) + " for a network with " +
                     std::to_string(theta_.size()) + " parameters");
  }
  theta_ = std::move(theta);
}

void Network::init(std::uint64_t seed, WeightInit init) {
  Rng rng(seed);
  body_.init_params(theta_, rng, init);
}

std::vector<ParamSlice> Network::param_layout() const {
  std::vector<ParamSlice> out;
  for (std::size_t i = 0; i < body_.size(); ++i)
    out.push_back({i, body_.param_offset(i), body_.layer(i).param_count()});
  return out;
}

void Network::forward_trace(std::span<const double> sample, Trace& trace) const {
  body_.forward(theta_, sample, trace);
}

void Network::backward_from_logits(const Trace& trace, std::span<const double> grad_logits,
                                   std::span<double> grad_params) const {
  if (!has_softmax_output()) throw UsageError("backward_from_logits requires a softmax_output layer");
  body_.backward(theta_, trace, grad_logits, {}, grad_params, body_.size() - 1);
}

void Network::backward_from_output(const Trace& trace, std::span<const double> grad_output,
                                   std::span<double> grad_params) const {
  body_.backward(theta_, trace, grad_output, {}, grad_params);
}

Network make_network(const Shape& input, std::vector<LayerSpec> specs, std::uint64_t seed, WeightInit init) {
  Network net(input, std::move(specs));
  net.init(seed, init);
  return net;
}

Tensor forward(const Network& net, const Tensor& batch) {
  const std::size_t n = batch.rows();
  if (n == 0 || batch.row_size() != net.input_shape().size()) {
    throw ShapeError("batch rows of size " + std::to_string(batch.row_size()) +
                     " do not match layer 0 input shape " + net.input_shape().to_string());
  }
  Tensor out({n, net.num_outputs()});
  Trace trace;
  for (std::size_t i = 0; i < n; ++i) {
    net.forward_trace(batch.row(i), trace);
    const auto o = net.output(trace);
    std::copy(o.begin(), o.end(), out.row(i).begin());
  }
  return out;
}

std::vector<double> forward_sample(const Network& net, std::span<const double> sample) {
  Trace trace;
  net.forward_trace(sample, trace);
  const auto o = net.output(trace);
  return {o.begin(), o.end()};
}

namespace {

void check_label(const Network& net, std::size_t label) {
  if (!net.has_softmax_output()) throw UsageError("log-likelihood requires a softmax_output layer");
  if (label >= net.num_outputs()) {
    throw DataError("label " + std::to_string(label) + " out of range for " +
                    std::to_string(net.num_outputs()) + " classes");
  }
}

}  // namespace

double log_likelihood(const Network& net, std::span<const double> sample, std::size_t label) {
  check_label(net, label);
  const auto p = forward_sample(net, sample);
  return std::log(std::max(p[label], kProbabilityFloor));
}

void loglik_grad_from_trace(const Network& net, const Trace& trace, std::size_t label, std::span<double> grad) {
  check_label(net, label);
  std::fill(grad.begin(), grad.end(), 0.0);
  const auto p = net.output(trace);
  if (p[label] < kProbabilityFloor) return;
  std::vector<double> glogits(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) glogits[k] = (k == label ? 1.0 : 0.0) - p[k];
  net.backward_from_logits(trace, glogits, grad);
  for (const double g : grad)
    if (!std::isfinite(g)) throw NumericalError("non-finite log-likelihood gradient");
}

void loglik_grad_into(const Network& net, std::span<const double> sample, std::size_t label, Trace& trace,
                      std::span<double> grad) {
  check_label(net, label);
  net.forward_trace(sample, trace);
  loglik_grad_from_trace(net, trace, label, grad);
}

std::vector<double> loglik_grad(const Network& net, std::span<const double> sample, std::size_t label) {
  std::vector<double> grad(net.param_count());
  Trace trace;
  loglik_grad_into(net, sample, label, trace, grad);
  return grad;
}

namespace presets {

std::vector<LayerSpec> small_convnet(std::size_t num_classes) {
  return {
      {Conv2dSpec{8, 3, 3, 1}}, {ReluSpec{}}, {MaxPool2dSpec{2, 2}},
      {Conv2dSpec{16, 3, 3, 1}}, {ReluSpec{}}, {MaxPool2dSpec{2, 2}},
      {FlattenSpec{}}, {DenseSpec{16}}, {ReluSpec{}},
      {DenseSpec{num_classes}}, {SoftmaxOutputSpec{}},
  };
}

std::vector<LayerSpec> vgg16(std::size_t num_classes) {
  std::vector<LayerSpec> specs;
  const std::size_t stages[5][2] = {{64, 2}, {128, 2}, {256, 3}, {512, 3}, {512, 3}};
  for (const auto& [channels, repeats] : stages) {
    for (std::size_t r = 0; r < repeats; ++r) {
      specs.push_back({Conv2dSpec{channels, 3, 3, 1}});
      specs.push_back({ReluSpec{}});
    }
    specs.push_back({MaxPool2dSpec{2, 2}});
  }
  specs.push_back({FlattenSpec{}});
  specs.push_back({DenseSpec{num_classes}});
  specs.push_back({SoftmaxOutputSpec{}});
  return specs;
}

}  // namespace presets

}  // namespace tasknas
