#include "tasknas/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include "tasknas/errors.hpp"

namespace tasknas {
namespace {

using Index = std::ptrdiff_t;

struct Padding {
  std::size_t out = 0;
  Index before = 0;
};

Padding same_padding(std::size_t in, std::size_t kernel, std::size_t stride) {
  const std::size_t out = (in + stride - 1) / stride;
  const Index total = std::max<Index>(static_cast<Index>((out - 1) * stride + kernel) - static_cast<Index>(in), 0);
  return {out, total / 2};
}

// Output columns [lo, hi) whose input column ox * stride + k - pad lies in [0, width).
std::pair<Index, Index> valid_range(Index out, Index width, Index k, Index pad, Index stride) {
  const Index shift = k - pad;
  Index lo = 0;
  if (shift < 0) lo = (-shift + stride - 1) / stride;
  const Index last = width - 1 - shift;
  if (last < 0) return {0, 0};
  const Index hi = std::min(out, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

void init_weights(std::span<double> w, std::size_t fan_in, std::size_t fan_out, Rng& rng,
                  WeightInit init) {
  const double denom = static_cast<double>(fan_in + fan_out);
  if (init == WeightInit::uniform_scaled) {
    const double limit = std::sqrt(6.0 / denom);
    for (double& v : w) v = rng.uniform(-limit, limit);
  } else {
    const double stddev = std::sqrt(2.0 / denom);
    for (double& v : w) v = stddev * rng.normal();
  }
}

class DenseLayer final : public Layer {
 public:
  DenseLayer(const Shape& in, const DenseSpec& spec)
      : Layer(in, Shape{spec.units, 1, 1}), in_(in.size()), out_(spec.units) {}

  std::string name() const override { return "dense"; }
  std::size_t param_count() const override { return in_ * out_ + out_; }

  void init_params(std::span<double> p, Rng& rng, WeightInit init) const override {
    init_weights(p.first(in_ * out_), in_, out_, rng, init);
    std::fill(p.begin() + static_cast<Index>(in_ * out_), p.end(), 0.0);
  }

  void forward(std::span<const double> p, std::span<const double> in, std::span<double> out,
               LayerScratch&) const override {
    const double* w = p.data();
    const double* b = p.data() + in_ * out_;
    for (std::size_t o = 0; o < out_; ++o) {
      double acc = b[o];
      const double* row = w + o * in_;
      for (std::size_t i = 0; i < in_; ++i) acc += row[i] * in[i];
      out[o] = acc;
    }
  }

  void backward(std::span<const double> p, std::span<const double> in, std::span<const double>,
                std::span<const double> gout, const LayerScratch&, std::span<double> gin,
                std::span<double> gp) const override {
    const double* w = p.data();
    double* gw = gp.data();
    double* gb = gp.data() + in_ * out_;
    if (!gin.empty()) std::fill(gin.begin(), gin.end(), 0.0);
    for (std::size_t o = 0; o < out_; ++o) {
      const double g = gout[o];
      gb[o] += g;
      if (g == 0.0) continue;
      double* grow = gw + o * in_;
      for (std::size_t i = 0; i < in_; ++i) grow[i] += g * in[i];
      if (!gin.empty()) {
        const double* row = w + o * in_;
        for (std::size_t i = 0; i < in_; ++i) gin[i] += g * row[i];
      }
    }
  }

 private:
  std::size_t in_;
  std::size_t out_;
};

class Conv2dLayer final : public Layer {
 public:
  Conv2dLayer(const Shape& in, const Conv2dSpec& spec)
      : Layer(in, Shape{spec.out_channels, same_padding(in.height, spec.kernel_h, spec.stride).out,
                        same_padding(in.width, spec.kernel_w, spec.stride).out}),
        spec_(spec),
        pad_h_(same_padding(in.height, spec.kernel_h, spec.stride).before),
        pad_w_(same_padding(in.width, spec.kernel_w, spec.stride).before) {}

  std::string name() const override { return "conv2d"; }

  std::size_t weight_count() const {
    return spec_.out_channels * input_shape().channels * spec_.kernel_h * spec_.kernel_w;
  }
  std::size_t param_count() const override { return weight_count() + spec_.out_channels; }

  void init_params(std::span<double> p, Rng& rng, WeightInit init) const override {
    const std::size_t area = spec_.kernel_h * spec_.kernel_w;
    init_weights(p.first(weight_count()), input_shape().channels * area, spec_.out_channels * area,
                 rng, init);
    std::fill(p.begin() + static_cast<Index>(weight_count()), p.end(), 0.0);
  }

  void forward(std::span<const double> p, std::span<const double> in, std::span<double> out,
               LayerScratch&) const override {
    const Shape& is = input_shape();
    const Shape& os = output_shape();
    const std::size_t plane = os.height * os.width;
    const double* bias = p.data() + weight_count();
    for (std::size_t oc = 0; oc < os.channels; ++oc)
      std::fill_n(out.data() + oc * plane, plane, bias[oc]);

    const Index stride = static_cast<Index>(spec_.stride);
    for (std::size_t oc = 0; oc < os.channels; ++oc) {
      double* oplane = out.data() + oc * plane;
      for (std::size_t ic = 0; ic < is.channels; ++ic) {
        const double* iplane = in.data() + ic * is.height * is.width;
        const double* kernel = p.data() + (oc * is.channels + ic) * spec_.kernel_h * spec_.kernel_w;
        for (std::size_t ky = 0; ky < spec_.kernel_h; ++ky) {
          const auto [ylo, yhi] = valid_range(static_cast<Index>(os.height), static_cast<Index>(is.height),
                                              static_cast<Index>(ky), pad_h_, stride);
          for (std::size_t kx = 0; kx < spec_.kernel_w; ++kx) {
            const double w = kernel[ky * spec_.kernel_w + kx];
            const auto [xlo, xhi] = valid_range(static_cast<Index>(os.width), static_cast<Index>(is.width),
                                                static_cast<Index>(kx), pad_w_, stride);
            const Index xoff = static_cast<Index>(kx) - pad_w_;
            for (Index oy = ylo; oy < yhi; ++oy) {
              const Index iy = oy * stride + static_cast<Index>(ky) - pad_h_;
              const double* irow = iplane + iy * static_cast<Index>(is.width);
              double* orow = oplane + oy * static_cast<Index>(os.width);
              if (stride == 1) {
                for (Index ox = xlo; ox < xhi; ++ox) orow[ox] += w * irow[ox + xoff];
              } else {
                for (Index ox = xlo; ox < xhi; ++ox) orow[ox] += w * irow[ox * stride + xoff];
              }
            }
          }
        }
      }
    }
  }

  void backward(std::span<const double> p, std::span<const double> in, std::span<const double>,
                std::span<const double> gout, const LayerScratch&, std::span<double> gin,
                std::span<double> gp) const override {
    const Shape& is = input_shape();
    const Shape& os = output_shape();
    const std::size_t plane = os.height * os.width;
    double* gbias = gp.data() + weight_count();
    for (std::size_t oc = 0; oc < os.channels; ++oc) {
      double s = 0.0;
      for (std::size_t k = 0; k < plane; ++k) s += gout[oc * plane + k];
      gbias[oc] += s;
    }
    if (!gin.empty()) std::fill(gin.begin(), gin.end(), 0.0);

    const Index stride = static_cast<Index>(spec_.stride);
    for (std::size_t oc = 0; oc < os.channels; ++oc) {
      const double* gplane = gout.data() + oc * plane;
      for (std::size_t ic = 0; ic < is.channels; ++ic) {
        const std::size_t koff = (oc * is.channels + ic) * spec_.kernel_h * spec_.kernel_w;
        const double* iplane = in.data() + ic * is.height * is.width;
        double* giplane = gin.empty() ? nullptr : gin.data() + ic * is.height * is.width;
        for (std::size_t ky = 0; ky < spec_.kernel_h; ++ky) {
          const auto [ylo, yhi] = valid_range(static_cast<Index>(os.height), static_cast<Index>(is.height),
                                              static_cast<Index>(ky), pad_h_, stride);
          for (std::size_t kx = 0; kx < spec_.kernel_w; ++kx) {
            const std::size_t widx = koff + ky * spec_.kernel_w + kx;
            const double w = p[widx];
            const auto [xlo, xhi] = valid_range(static_cast<Index>(os.width), static_cast<Index>(is.width),
                                                static_cast<Index>(kx), pad_w_, stride);
            const Index xoff = static_cast<Index>(kx) - pad_w_;
            double gw = 0.0;
            for (Index oy = ylo; oy < yhi; ++oy) {
              const Index iy = oy * stride + static_cast<Index>(ky) - pad_h_;
              const double* irow = iplane + iy * static_cast<Index>(is.width);
              const double* grow = gplane + oy * static_cast<Index>(os.width);
              for (Index ox = xlo; ox < xhi; ++ox) gw += grow[ox] * irow[ox * stride + xoff];
              if (giplane != nullptr) {
                double* girow = giplane + iy * static_cast<Index>(is.width);
                for (Index ox = xlo; ox < xhi; ++ox) girow[ox * stride + xoff] += w * grow[ox];
              }
            }
            gp[widx] += gw;
          }
        }
      }
    }
  }

 private:
  Conv2dSpec spec_;
  Index pad_h_;
  Index pad_w_;
};

class SeparableConv2dLayer final : public Layer {
 public:
  SeparableConv2dLayer(const Shape& in, const SeparableConv2dSpec& spec)
      : Layer(in, Shape{spec.out_channels, in.height, in.width}),
        spec_(spec),
        pad_(same_padding(in.height, spec.kernel, 1).before),
        pad_w_(same_padding(in.width, spec.kernel, 1).before) {}

  std::string name() const override { return "separable_conv2d"; }

  std::size_t depthwise_count() const { return input_shape().channels * spec_.kernel * spec_.kernel; }
  std::size_t pointwise_count() const { return spec_.out_channels * input_shape().channels; }
  std::size_t param_count() const override {
    return depthwise_count() + pointwise_count() + spec_.out_channels;
  }

  void init_params(std::span<double> p, Rng& rng, WeightInit init) const override {
    const std::size_t area = spec_.kernel * spec_.kernel;
    init_weights(p.first(depthwise_count()), area, area, rng, init);
    init_weights(p.subspan(depthwise_count(), pointwise_count()), input_shape().channels,
                 spec_.out_channels, rng, init);
    std::fill(p.begin() + static_cast<Index>(depthwise_count() + pointwise_count()), p.end(), 0.0);
  }

  void forward(std::span<const double> p, std::span<const double> in, std::span<double> out,
               LayerScratch& scratch) const override {
    const Shape& is = input_shape();
    const std::size_t plane = is.height * is.width;
    scratch.nodes.resize(1);
    auto& depth = scratch.nodes[0];
    depth.assign(is.channels * plane, 0.0);
    for (std::size_t c = 0; c < is.channels; ++c) {
      const double* kernel = p.data() + c * spec_.kernel * spec_.kernel;
      for_each_tap(c, kernel, [&](double w, const double* irow, double* orow, Index xlo, Index xhi, Index xoff) {
        for (Index ox = xlo; ox < xhi; ++ox) orow[ox] += w * irow[ox + xoff];
      }, in.data(), depth.data());
    }
    const double* pw = p.data() + depthwise_count();
    const double* bias = pw + pointwise_count();
    for (std::size_t oc = 0; oc < spec_.out_channels; ++oc) {
      double* oplane = out.data() + oc * plane;
      std::fill_n(oplane, plane, bias[oc]);
      for (std::size_t c = 0; c < is.channels; ++c) {
        const double w = pw[oc * is.channels + c];
        const double* dplane = depth.data() + c * plane;
        for (std::size_t k = 0; k < plane; ++k) oplane[k] += w * dplane[k];
      }
    }
  }

  void backward(std::span<const double> p, std::span<const double> in, std::span<const double>,
                std::span<const double> gout, const LayerScratch& scratch, std::span<double> gin,
                std::span<double> gp) const override {
    const Shape& is = input_shape();
    const std::size_t plane = is.height * is.width;
    const auto& depth = scratch.nodes[0];
    const double* pw = p.data() + depthwise_count();
    double* gpw = gp.data() + depthwise_count();
    double* gbias = gpw + pointwise_count();

    std::vector<double> gdepth(is.channels * plane, 0.0);
    for (std::size_t oc = 0; oc < spec_.out_channels; ++oc) {
      const double* gplane = gout.data() + oc * plane;
      double gb = 0.0;
      for (std::size_t k = 0; k < plane; ++k) gb += gplane[k];
      gbias[oc] += gb;
      for (std::size_t c = 0; c < is.channels; ++c) {
        const double* dplane = depth.data() + c * plane;
        double* gdplane = gdepth.data() + c * plane;
        const double w = pw[oc * is.channels + c];
        double gw = 0.0;
        for (std::size_t k = 0; k < plane; ++k) {
          gw += gplane[k] * dplane[k];
          gdplane[k] += w * gplane[k];
        }
        gpw[oc * is.channels + c] += gw;
      }
    }

    if (!gin.empty()) std::fill(gin.begin(), gin.end(), 0.0);
    const std::size_t area = spec_.kernel * spec_.kernel;
    for (std::size_t c = 0; c < is.channels; ++c) {
      const double* kernel = p.data() + c * area;
      const double* iplane = in.data() + c * plane;
      const double* gplane = gdepth.data() + c * plane;
      double* giplane = gin.empty() ? nullptr : gin.data() + c * plane;
      for (std::size_t ky = 0; ky < spec_.kernel; ++ky) {
        const auto [ylo, yhi] = valid_range(static_cast<Index>(is.height), static_cast<Index>(is.height),
                                            static_cast<Index>(ky), pad_, 1);
        for (std::size_t kx = 0; kx < spec_.kernel; ++kx) {
          const auto [xlo, xhi] = valid_range(static_cast<Index>(is.width), static_cast<Index>(is.width),
                                              static_cast<Index>(kx), pad_w_, 1);
          const Index xoff = static_cast<Index>(kx) - pad_w_;
          const double w = kernel[ky * spec_.kernel + kx];
          double gw = 0.0;
          for (Index oy = ylo; oy < yhi; ++oy) {
            const Index iy = oy + static_cast<Index>(ky) - pad_;
            const double* irow = iplane + iy * static_cast<Index>(is.width);
            const double* grow = gplane + oy * static_cast<Index>(is.width);
            for (Index ox = xlo; ox < xhi; ++ox) gw += grow[ox] * irow[ox + xoff];
            if (giplane != nullptr) {
              double* girow = giplane + iy * static_cast<Index>(is.width);
              for (Index ox = xlo; ox < xhi; ++ox) girow[ox + xoff] += w * grow[ox];
            }
          }
          gp[c * area + ky * spec_.kernel + kx] += gw;
        }
      }
    }
  }

 private:
  template <typename Fn>
  void for_each_tap(std::size_t c, const double* kernel, Fn&& fn, const double* in, double* out) const {
    const Shape& is = input_shape();
    const std::size_t plane = is.height * is.width;
    const double* iplane = in + c * plane;
    double* oplane = out + c * plane;
    for (std::size_t ky = 0; ky < spec_.kernel; ++ky) {
      const auto [ylo, yhi] = valid_range(static_cast<Index>(is.height), static_cast<Index>(is.height),
                                          static_cast<Index>(ky), pad_, 1);
      for (std::size_t kx = 0; kx < spec_.kernel; ++kx) {
        const auto [xlo, xhi] = valid_range(static_cast<Index>(is.width), static_cast<Index>(is.width),
                                            static_cast<Index>(kx), pad_w_, 1);
        const Index xoff = static_cast<Index>(kx) - pad_w_;
        const double w = kernel[ky * spec_.kernel + kx];
        for (Index oy = ylo; oy < yhi; ++oy) {
          const Index iy = oy + static_cast<Index>(ky) - pad_;
          fn(w, iplane + iy * static_cast<Index>(is.width), oplane + oy * static_cast<Index>(is.width),
             xlo, xhi, xoff);
        }
      }
    }
  }

  SeparableConv2dSpec spec_;
  Index pad_;
  Index pad_w_;
};

class MaxPool2dLayer final : public Layer {
 public:
  MaxPool2dLayer(const Shape& in, const MaxPool2dSpec& spec)
      : Layer(in, Shape{in.channels, same_padding(in.height, spec.kernel, spec.stride).out,
                        same_padding(in.width, spec.kernel, spec.stride).out}),
        spec_(spec),
        pad_h_(same_padding(in.height, spec.kernel, spec.stride).before),
        pad_w_(same_padding(in.width, spec.kernel, spec.stride).before) {}

  std::string name() const override { return "max_pool2d"; }

  void forward(std::span<const double>, std::span<const double> in, std::span<double> out,
               LayerScratch& scratch) const override {
    const Shape& is = input_shape();
    const Shape& os = output_shape();
    scratch.indices.resize(os.size());
    const Index stride = static_cast<Index>(spec_.stride);
    const Index k = static_cast<Index>(spec_.kernel);
    std::size_t o = 0;
    for (std::size_t c = 0; c < os.channels; ++c) {
      const std::size_t base = c * is.height * is.width;
      for (Index oy = 0; oy < static_cast<Index>(os.height); ++oy) {
        const Index y0 = std::max<Index>(oy * stride - pad_h_, 0);
        const Index y1 = std::min<Index>(oy * stride - pad_h_ + k, static_cast<Index>(is.height));
        for (Index ox = 0; ox < static_cast<Index>(os.width); ++ox, ++o) {
          const Index x0 = std::max<Index>(ox * stride - pad_w_, 0);
          const Index x1 = std::min<Index>(ox * stride - pad_w_ + k, static_cast<Index>(is.width));
          double best = -std::numeric_limits<double>::infinity();
          std::size_t arg = base + static_cast<std::size_t>(y0 * static_cast<Index>(is.width) + x0);
          for (Index y = y0; y < y1; ++y) {
            for (Index x = x0; x < x1; ++x) {
              const std::size_t idx = base + static_cast<std::size_t>(y * static_cast<Index>(is.width) + x);
              if (in[idx] > best) {
                best = in[idx];
                arg = idx;
              }
            }
          }
          out[o] = best;
          scratch.indices[o] = arg;
        }
      }
    }
  }

  void backward(std::span<const double>, std::span<const double>, std::span<const double>,
                std::span<const double> gout, const LayerScratch& scratch, std::span<double> gin,
                std::span<double>) const override {
    if (gin.empty()) return;
    std::fill(gin.begin(), gin.end(), 0.0);
    for (std::size_t o = 0; o < gout.size(); ++o) gin[scratch.indices[o]] += gout[o];
  }

 private:
  MaxPool2dSpec spec_;
  Index pad_h_;
  Index pad_w_;
};

class GlobalAvgPoolLayer final : public Layer {
 public:
  explicit GlobalAvgPoolLayer(const Shape& in) : Layer(in, Shape{in.channels, 1, 1}) {}

  std::string name() const override { return "global_avg_pool"; }

  void forward(std::span<const double>, std::span<const double> in, std::span<double> out,
               LayerScratch&) const override {
    const std::size_t plane = input_shape().height * input_shape().width;
    for (std::size_t c = 0; c < input_shape().channels; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < plane; ++k) s += in[c * plane + k];
      out[c] = s / static_cast<double>(plane);
    }
  }

  void backward(std::span<const double>, std::span<const double>, std::span<const double>,
                std::span<const double> gout, const LayerScratch&, std::span<double> gin,
                std::span<double>) const override {
    if (gin.empty()) return;
    const std::size_t plane = input_shape().height * input_shape().width;
    for (std::size_t c = 0; c < input_shape().channels; ++c) {
      const double g = gout[c] / static_cast<double>(plane);
      std::fill_n(gin.data() + c * plane, plane, g);
    }
  }
};

class ReluLayer final : public Layer {
 public:
  explicit ReluLayer(const Shape& in) : Layer(in, in) {}

  std::string name() const override { return "relu"; }

  void forward(std::span<const double>, std::span<const double> in, std::span<double> out,
               LayerScratch&) const override {
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  }

  void backward(std::span<const double>, std::span<const double> in, std::span<const double>,
                std::span<const double> gout, const LayerScratch&, std::span<double> gin,
                std::span<double>) const override {
    if (gin.empty()) return;
    for (std::size_t i = 0; i < in.size(); ++i) gin[i] = in[i] > 0.0 ? gout[i] : 0.0;
  }
};

class FlattenLayer final : public Layer {
 public:
  explicit FlattenLayer(const Shape& in) : Layer(in, Shape{in.size(), 1, 1}) {}

  std::string name() const override { return "flatten"; }

  void forward(std::span<const double>, std::span<const double> in, std::span<double> out,
               LayerScratch&) const override {
    std::copy(in.begin(), in.end(), out.begin());
  }

  void backward(std::span<const double>, std::span<const double>, std::span<const double>,
                std::span<const double> gout, const LayerScratch&, std::span<double> gin,
                std::span<double>) const override {
    if (!gin.empty()) std::copy(gout.begin(), gout.end(), gin.begin());
  }
};

class SoftmaxOutputLayer final : public Layer {
 public:
  explicit SoftmaxOutputLayer(const Shape& in) : Layer(in, in) {}

  std::string name() const override { return "softmax_output"; }

  void forward(std::span<const double>, std::span<const double> in, std::span<double> out,
               LayerScratch&) const override {
    const double top = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      out[i] = std::exp(in[i] - top);
      total += out[i];
    }
    for (double& v : out) v /= total;
  }

  void backward(std::span<const double>, std::span<const double>, std::span<const double> out,
                std::span<const double> gout, const LayerScratch&, std::span<double> gin,
                std::span<double>) const override {
    if (gin.empty()) return;
    double dot = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) dot += gout[i] * out[i];
    for (std::size_t i = 0; i < out.size(); ++i) gin[i] = out[i] * (gout[i] - dot);
  }
};

class DagBlockLayer final : public Layer {
 public:
  DagBlockLayer(const Shape& in, const DagBlockSpec& spec) : Layer(in, in), num_nodes_(spec.num_nodes) {
    if (spec.num_nodes < 2) throw ShapeError("dag block needs at least 2 nodes");
    std::vector<std::size_t> incoming(spec.num_nodes, 0);
    std::size_t offset = 0;
    for (const auto& edge : spec.edges) {
      if (edge.from >= edge.to || edge.to >= spec.num_nodes) {
        throw ShapeError("dag block edge " + std::to_string(edge.from) + "->" + std::to_string(edge.to) +
                         " violates topological order");
      }
      Sequential ops(in, edge.ops);
      if (!(ops.output_shape() == in)) {
        throw ShapeError("dag block edge " + std::to_string(edge.from) + "->" + std::to_string(edge.to) +
                         " maps " + in.to_string() + " to " + ops.output_shape().to_string());
      }
      edges_.push_back({edge.from, edge.to, std::move(ops), offset});
      offset += edges_.back().ops.param_count();
      ++incoming[edge.to];
    }
    param_count_ = offset;
    for (std::size_t j = 1; j < spec.num_nodes; ++j) {
      if (incoming[j] == 0) throw ShapeError("dag block node " + std::to_string(j) + " has no input edge");
    }
    // Edges grouped by destination, in declaration order.
    for (std::size_t j = 1; j < num_nodes_; ++j)
      for (std::size_t e = 0; e < edges_.size(); ++e)
        if (edges_[e].to == j) order_.push_back(e);
  }

  std::string name() const override { return "dag_block"; }
  std::size_t param_count() const override { return param_count_; }

  void init_params(std::span<double> p, Rng& rng, WeightInit init) const override {
    for (const auto& edge : edges_)
      edge.ops.init_params(p.subspan(edge.offset, edge.ops.param_count()), rng, init);
  }

  void forward(std::span<const double> p, std::span<const double> in, std::span<double> out,
               LayerScratch& scratch) const override {
    scratch.nodes.assign(num_nodes_, {});
    scratch.edges.resize(edges_.size());
    scratch.nodes[0].assign(in.begin(), in.end());
    std::vector<std::size_t> seen(num_nodes_, 0);
    for (const std::size_t e : order_) {
      const Edge& edge = edges_[e];
      auto& node = scratch.nodes[edge.to];
      const auto& src = scratch.nodes[edge.from];
      std::span<const double> value = src;
      if (edge.ops.size() > 0) {
        edge.ops.forward(p.subspan(edge.offset, edge.ops.param_count()), src, scratch.edges[e]);
        value = scratch.edges[e].activations.back();
      }
      if (seen[edge.to]++ == 0) {
        node.assign(value.begin(), value.end());
      } else {
        for (std::size_t i = 0; i < node.size(); ++i) node[i] += value[i];
      }
    }
    const auto& last = scratch.nodes.back();
    std::copy(last.begin(), last.end(), out.begin());
  }

  void backward(std::span<const double> p, std::span<const double>, std::span<const double>,
                std::span<const double> gout, const LayerScratch& scratch, std::span<double> gin,
                std::span<double> gp) const override {
    const std::size_t n = input_shape().size();
    std::vector<std::vector<double>> gnode(num_nodes_, std::vector<double>(n, 0.0));
    std::copy(gout.begin(), gout.end(), gnode.back().begin());

    std::vector<double> gsrc(n);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      const Edge& edge = edges_[*it];
      const auto& gdst = gnode[edge.to];
      auto& gfrom = gnode[edge.from];
      if (edge.ops.size() == 0) {
        for (std::size_t i = 0; i < n; ++i) gfrom[i] += gdst[i];
        continue;
      }
      const bool need_input = edge.from != 0 || !gin.empty();
      edge.ops.backward(p.subspan(edge.offset, edge.ops.param_count()), scratch.edges[*it], gdst,
                        need_input ? std::span<double>(gsrc) : std::span<double>{},
                        gp.subspan(edge.offset, edge.ops.param_count()));
      if (need_input)
        for (std::size_t i = 0; i < n; ++i) gfrom[i] += gsrc[i];
    }
    if (!gin.empty()) std::copy(gnode[0].begin(), gnode[0].end(), gin.begin());
  }

 private:
  struct Edge {
    std::size_t from;
    std::size_t to;
    Sequential ops;
    std::size_t offset;
  };

  std::size_t num_nodes_;
  std::vector<Edge> edges_;
  std::vector<std::size_t> order_;
  std::size_t param_count_ = 0;
};

}  // namespace

std::string layer_kind_name(const LayerSpec& spec) {
  struct Visitor {
    std::string operator()(const DenseSpec&) const { return "dense"; }
    std::string operator()(const Conv2dSpec&) const { return "conv2d"; }
    std::string operator()(const SeparableConv2dSpec&) const { return "separable_conv2d"; }
    std::string operator()(const MaxPool2dSpec&) const { return "max_pool2d"; }
    std::string operator()(const GlobalAvgPoolSpec&) const { return "global_avg_pool"; }
    std::string operator()(const ReluSpec&) const { return "relu"; }
    std::string operator()(const FlattenSpec&) const { return "flatten"; }
    std::string operator()(const SoftmaxOutputSpec&) const { return "softmax_output"; }
    std::string operator()(const DagBlockSpec&) const { return "dag_block"; }
  };
  return std::visit(Visitor{}, spec.kind);
}

std::shared_ptr<const Layer> make_layer(const LayerSpec& spec, const Shape& in) {
  if (in.size() == 0) throw ShapeError(layer_kind_name(spec) + ": empty input shape");
  struct Visitor {
    const Shape& in;
    std::shared_ptr<const Layer> operator()(const DenseSpec& s) const {
      if (!in.is_flat()) throw ShapeError("dense expects a flat input, got " + in.to_string());
      if (s.units == 0) throw ShapeError("dense with zero units");
      return std::make_shared<DenseLayer>(in, s);
    }
    std::shared_ptr<const Layer> operator()(const Conv2dSpec& s) const {
      if (s.out_channels == 0 || s.kernel_h == 0 || s.kernel_w == 0 || s.stride == 0)
        throw ShapeError("conv2d with zero extent");
      return std::make_shared<Conv2dLayer>(in, s);
    }
    std::shared_ptr<const Layer> operator()(const SeparableConv2dSpec& s) const {
      if (s.out_channels == 0 || s.kernel == 0) throw ShapeError("separable_conv2d with zero extent");
      return std::make_shared<SeparableConv2dLayer>(in, s);
    }
    std::shared_ptr<const Layer> operator()(const MaxPool2dSpec& s) const {
      if (s.kernel == 0 || s.stride == 0) throw ShapeError("max_pool2d with zero extent");
      return std::make_shared<MaxPool2dLayer>(in, s);
    }
    std::shared_ptr<const Layer> operator()(const GlobalAvgPoolSpec&) const {
      return std::make_shared<GlobalAvgPoolLayer>(in);
    }
    std::shared_ptr<const Layer> operator()(const ReluSpec&) const { return std::make_shared<ReluLayer>(in); }
    std::shared_ptr<const Layer> operator()(const FlattenSpec&) const {
      return std::make_shared<FlattenLayer>(in);
    }
    std::shared_ptr<const Layer> operator()(const SoftmaxOutputSpec&) const {
      if (!in.is_flat()) throw ShapeError("softmax_output expects a flat input, got " + in.to_string());
      return std::make_shared<SoftmaxOutputLayer>(in);
    }
    std::shared_ptr<const Layer> operator()(const DagBlockSpec& s) const {
      return std::make_shared<DagBlockLayer>(in, s);
    }
  };
  return std::visit(Visitor{in}, spec.kind);
}

Sequential::Sequential(const Shape& input, const std::vector<LayerSpec>& specs)
    : input_(input), output_(input) {
  for (std::size_t i = 0; i < specs.size(); ++i) {
    try {
      layers_.push_back(make_layer(specs[i], output_));
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " (" + layer_kind_name(specs[i]) + "): " + e.what());
    }
    offsets_.push_back(param_count_);
    param_count_ += layers_.back()->param_count();
    output_ = layers_.back()->output_shape();
  }
}

void Sequential::init_params(std::span<double> params, Rng& rng, WeightInit init) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->init_params(params.subspan(offsets_[i], layers_[i]->param_count()), rng, init);
}

void Sequential::forward(std::span<const double> params, std::span<const double> in, Trace& trace) const {
  if (in.size() != input_.size()) {
    throw ShapeError("input of size " + std::to_string(in.size()) + " does not match layer 0 (" +
                     (layers_.empty() ? std::string("none") : layers_[0]->name()) + ") input shape " +
                     input_.to_string());
  }
  trace.activations.resize(layers_.size() + 1);
  trace.scratch.resize(layers_.size());
  trace.activations[0].assign(in.begin(), in.end());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = *layers_[i];
    auto& out = trace.activations[i + 1];
    out.resize(layer.output_shape().size());
    layer.forward(params.subspan(offsets_[i], layer.param_count()), trace.activations[i], out,
                  trace.scratch[i]);
    for (const double v : out) {
      if (!std::isfinite(v)) {
        throw NumericalError("non-finite activation at layer " + std::to_string(i) + " (" + layer.name() + ")");
      }
    }
  }
}

void Sequential::backward(std::span<const double> params, const Trace& trace,
                          std::span<const double> grad_out, std::span<double> grad_in,
                          std::span<double> grad_params, std::size_t last) const {
  std::vector<double> g(grad_out.begin(), grad_out.end());
  std::vector<double> gprev;
  for (std::size_t i = last; i-- > 0;) {
    const Layer& layer = *layers_[i];
    const bool need_input = i > 0 || !grad_in.empty();
    if (need_input) gprev.assign(layer.input_shape().size(), 0.0);
    layer.backward(params.subspan(offsets_[i], layer.param_count()), trace.activations[i],
                   trace.activations[i + 1], g, trace.scratch[i],
                   need_input ? std::span<double>(gprev) : std::span<double>{},
                   grad_params.subspan(offsets_[i], layer.param_count()));
    if (need_input) g.swap(gprev);
  }
  if (!grad_in.empty()) std::copy(g.begin(), g.end(), grad_in.begin());
}

}  // namespace tasknas
