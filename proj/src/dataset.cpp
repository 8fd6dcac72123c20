#include "tasknas/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "tasknas/errors.hpp"
#include "tasknas/rng.hpp"

namespace tasknas {

std::string to_string(DataSource source) { return source == DataSource::mnist ? "mnist" : "cifar10"; }

DataSource parse_data_source(const std::string& name) {
  if (name == "mnist") return DataSource::mnist;
  if (name == "cifar10") return DataSource::cifar10;
  throw UsageError("unknown data source '" + name + "'");
}

void LabeledDataset::copy_sample(std::size_t i, std::vector<double>& out) const {
  const auto img = image(i);
  out.assign(img.begin(), img.end());
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.sample_shape = sample_shape;
  out.num_classes = num_classes;
  out.source = source;
  out.labels.reserve(indices.size());
  out.pixels.reserve(indices.size() * sample_shape.size());
  for (const std::size_t i : indices) {
    if (i >= size()) throw DataError("subset index out of range");
    const auto img = image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

void LabeledDataset::validate() const {
  if (pixels.size() != labels.size() * sample_shape.size())
    throw DataError("image count does not match label count");
  for (const std::size_t y : labels)
    if (y >= num_classes)
      throw DataError("label " + std::to_string(y) + " >= num_classes " + std::to_string(num_classes));
}

std::vector<std::size_t> class_counts(const LabeledDataset& data) {
  std::vector<std::size_t> counts(data.num_classes, 0);
  for (const std::size_t y : data.labels) ++counts.at(y);
  return counts;
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::filesystem::path first_existing(const std::filesystem::path& dir, std::initializer_list<const char*> names) {
  for (const char* name : names)
    if (std::filesystem::exists(dir / name)) return dir / name;
  throw DataError("none of the expected files found in " + dir.string() + " (first: " + *names.begin() + ")");
}

}  // namespace

LabeledDataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto ib = read_bytes(images);
  const auto lb = read_bytes(labels);
  if (ib.size() < 16) throw DataError("truncated IDX image file " + images.string());
  if (lb.size() < 8) throw DataError("truncated IDX label file " + labels.string());
  if (read_be32(ib, 0) != 0x00000803) throw DataError("bad magic number in " + images.string());
  if (read_be32(lb, 0) != 0x00000801) throw DataError("bad magic number in " + labels.string());

  const std::size_t count = read_be32(ib, 4);
  const std::size_t rows = read_be32(ib, 8);
  const std::size_t cols = read_be32(ib, 12);
  const std::size_t label_count = read_be32(lb, 4);
  if (count != label_count) {
    throw DataError("image count " + std::to_string(count) + " does not match label count " +
                    std::to_string(label_count));
  }
  if (ib.size() < 16 + count * rows * cols) throw DataError("truncated IDX image file " + images.string());
  if (lb.size() < 8 + count) throw DataError("truncated IDX label file " + labels.string());

  LabeledDataset out;
  out.sample_shape = {1, rows, cols};
  out.num_classes = 10;
  out.source = DataSource::mnist;
  out.pixels.resize(count * rows * cols);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = static_cast<float>(ib[16 + i] / 255.0);
  out.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.labels[i] = lb[8 + i];
    if (out.labels[i] > 9) throw DataError("MNIST label " + std::to_string(out.labels[i]) + " out of range");
  }
  return out;
}

LabeledDataset load_mnist(const std::filesystem::path& dir, bool train) {
  const char* prefix = train ? "train" : "t10k";
  const std::string img_a = std::string(prefix) + "-images-idx3-ubyte";
  const std::string img_b = std::string(prefix) + "-images.idx3-ubyte";
  const std::string lbl_a = std::string(prefix) + "-labels-idx1-ubyte";
  const std::string lbl_b = std::string(prefix) + "-labels.idx1-ubyte";
  return load_mnist_idx(first_existing(dir, {img_a.c_str(), img_b.c_str()}),
                        first_existing(dir, {lbl_a.c_str(), lbl_b.c_str()}));
}

LabeledDataset load_cifar10_batches(const std::vector<std::filesystem::path>& files) {
  constexpr std::size_t kRecord = 3073;
  LabeledDataset out;
  out.sample_shape = {3, 32, 32};
  out.num_classes = 10;
  out.source = DataSource::cifar10;
  for (const auto& file : files) {
    const auto bytes = read_bytes(file);
    if (bytes.empty() || bytes.size() % kRecord != 0) {
      throw DataError("CIFAR-10 file " + file.string() + " has length " + std::to_string(bytes.size()) +
                      ", not a positive multiple of 3073");
    }
    for (std::size_t r = 0; r < bytes.size() / kRecord; ++r) {
      const std::uint8_t* rec = bytes.data() + r * kRecord;
      if (rec[0] > 9) throw DataError("CIFAR-10 label " + std::to_string(rec[0]) + " out of range");
      out.labels.push_back(rec[0]);
      for (std::size_t k = 1; k < kRecord; ++k) out.pixels.push_back(static_cast<float>(rec[k] / 255.0));
    }
  }
  return out;
}

LabeledDataset load_cifar10(const std::filesystem::path& dir, bool train) {
  std::vector<std::filesystem::path> files;
  if (train) {
    for (int b = 1; b <= 5; ++b) files.push_back(dir / ("data_batch_" + std::to_string(b) + ".bin"));
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  return load_cifar10_batches(files);
}

LabeledDataset adapt_mnist_to_rgb32(const LabeledDataset& data, SpatialAdapt mode) {
  if (!(data.sample_shape == Shape{1, 28, 28}))
    throw ShapeError("expected 1x28x28 images, got " + data.sample_shape.to_string());
  LabeledDataset out;
  out.sample_shape = {3, 32, 32};
  out.labels = data.labels;
  out.num_classes = data.num_classes;
  out.source = data.source;
  out.pixels.assign(data.size() * out.sample_shape.size(), 0.0f);

  std::array<float, 32 * 32> plane{};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto src = data.image(i);
    plane.fill(0.0f);
    if (mode == SpatialAdapt::zero_pad) {
      for (std::size_t r = 0; r < 28; ++r)
        for (std::size_t c = 0; c < 28; ++c) plane[(r + 2) * 32 + (c + 2)] = src[r * 28 + c];
    } else {
      const double scale = 28.0 / 32.0;
      for (std::size_t r = 0; r < 32; ++r) {
        const double y = std::clamp((static_cast<double>(r) + 0.5) * scale - 0.5, 0.0, 27.0);
        const auto y0 = static_cast<std::size_t>(y);
        const std::size_t y1 = std::min<std::size_t>(y0 + 1, 27);
        const double fy = y - static_cast<double>(y0);
        for (std::size_t c = 0; c < 32; ++c) {
          const double x = std::clamp((static_cast<double>(c) + 0.5) * scale - 0.5, 0.0, 27.0);
          const auto x0 = static_cast<std::size_t>(x);
          const std::size_t x1 = std::min<std::size_t>(x0 + 1, 27);
          const double fx = x - static_cast<double>(x0);
          const double top = src[y0 * 28 + x0] * (1 - fx) + src[y0 * 28 + x1] * fx;
          const double bottom = src[y1 * 28 + x0] * (1 - fx) + src[y1 * 28 + x1] * fx;
          plane[r * 32 + c] = static_cast<float>(top * (1 - fy) + bottom * fy);
        }
      }
    }
    auto dst = out.image(i);
    for (std::size_t ch = 0; ch < 3; ++ch) std::copy(plane.begin(), plane.end(), dst.begin() + ch * 1024);
  }
  return out;
}

namespace {

constexpr std::uint64_t kPrototypeSeed = 0x7a5c0de5eedULL;

float quantize(double v) { return static_cast<float>(std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0); }

struct Segment {
  double x0, y0, x1, y1;
};

double distance_to_segment(double px, double py, const Segment& s) {
  const double dx = s.x1 - s.x0;
  const double dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = s.x0 + t * dx - px;
  const double ey = s.y0 + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace

LabeledDataset synthetic_mnist(std::size_t count, std::uint64_t seed) {
  std::array<std::array<Segment, 3>, 10> strokes{};
  Rng proto(kPrototypeSeed);
  for (auto& digit : strokes)
    for (auto& s : digit) s = {proto.uniform(7, 21), proto.uniform(6, 22), proto.uniform(7, 21), proto.uniform(6, 22)};

  LabeledDataset out;
  out.sample_shape = {1, 28, 28};
  out.num_classes = 10;
  out.source = DataSource::mnist;
  out.pixels.resize(count * 784);
  out.labels.resize(count);
  Rng rng(mix_seed(seed, 1));
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = rng.index(10);
    out.labels[i] = label;
    const double shift_x = rng.uniform(-2.0, 2.0);
    const double shift_y = rng.uniform(-2.0, 2.0);
    const double width = rng.uniform(1.0, 1.6);
    const double ink = rng.uniform(0.75, 1.0);
    auto img = out.image(i);
    for (std::size_t r = 0; r < 28; ++r) {
      for (std::size_t c = 0; c < 28; ++c) {
        double d = 1e9;
        for (const auto& s : strokes[label])
          d = std::min(d, distance_to_segment(static_cast<double>(c) - shift_x, static_cast<double>(r) - shift_y, s));
        double v = ink * std::exp(-0.5 * (d * d) / (width * width));
        if (v < 0.05) v = 0.0;
        if (v > 0.0 || rng.uniform() < 0.02) v += 0.1 * rng.normal();
        img[r * 28 + c] = quantize(v);
      }
    }
  }
  return out;
}

LabeledDataset synthetic_cifar10(std::size_t count, std::uint64_t seed) {
  struct Prototype {
    std::array<double, 3> color;
    std::array<double, 3> amplitude;
    double fx, fy;
    std::array<double, 3> phase;
  };
  std::array<Prototype, 10> protos{};
  Rng proto(mix_seed(kPrototypeSeed, 2));
  for (auto& p : protos) {
    for (double& c : p.color) c = proto.uniform(0.25, 0.75);
    for (double& a : p.amplitude) a = proto.uniform(0.05, 0.2);
    const double angle = proto.uniform(0.0, std::numbers::pi);
    const double freq = proto.uniform(0.15, 0.6);
    p.fx = freq * std::cos(angle);
    p.fy = freq * std::sin(angle);
    for (double& ph : p.phase) ph = proto.uniform(0.0, 2.0 * std::numbers::pi);
  }

  LabeledDataset out;
  out.sample_shape = {3, 32, 32};
  out.num_classes = 10;
  out.source = DataSource::cifar10;
  out.pixels.resize(count * 3072);
  out.labels.resize(count);
  Rng rng(mix_seed(seed, 2));
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = rng.index(10);
    out.labels[i] = label;
    const Prototype& p = protos[label];
    const double offset = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double brightness = rng.uniform(-0.12, 0.12);
    auto img = out.image(i);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      for (std::size_t r = 0; r < 32; ++r) {
        for (std::size_t c = 0; c < 32; ++c) {
          const double wave = std::sin(p.fx * static_cast<double>(c) + p.fy * static_cast<double>(r) + p.phase[ch] + offset);
          const double v = p.color[ch] + brightness + p.amplitude[ch] * wave + 0.1 * rng.normal();
          img[ch * 1024 + r * 32 + c] = quantize(v);
        }
      }
    }
  }
  return out;
}

}  // namespace tasknas
