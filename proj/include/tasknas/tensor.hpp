#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace tasknas {

/// Per-sample activation shape in channels-height-width order. Flat vectors
/// are represented as (n, 1, 1).
struct Shape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  constexpr std::size_t size() const { return channels * height * width; }
  constexpr bool is_flat() const { return height == 1 && width == 1; }
  bool operator==(const Shape&) const = default;

  std::string to_string() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
};

/// Dense row-major tensor of 64-bit reals.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> extents)
      : shape(std::move(extents)),
        data(std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{}), 0.0) {}

  std::size_t size() const { return data.size(); }

  /// Extent of the leading dimension, or 0 for an empty shape.
  std::size_t rows() const { return shape.empty() ? 0 : shape.front(); }

  std::size_t row_size() const { return rows() == 0 ? 0 : data.size() / rows(); }

  std::span<double> row(std::size_t i) { return {data.data() + i * row_size(), row_size()}; }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * row_size(), row_size()};
  }
};

}  // namespace tasknas
