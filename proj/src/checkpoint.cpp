#include "tasknas/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "tasknas/errors.hpp"

namespace tasknas {

using nlohmann::json;

json layer_to_json(const LayerSpec& spec) {
  struct Visitor {
    json operator()(const DenseSpec& s) const { return {{"kind", "dense"}, {"units", s.units}}; }
    json operator()(const Conv2dSpec& s) const {
      return {{"kind", "conv2d"}, {"out_channels", s.out_channels}, {"kernel", {s.kernel_h, s.kernel_w}},
              {"stride", s.stride}};
    }
    json operator()(const SeparableConv2dSpec& s) const {
      return {{"kind", "separable_conv2d"}, {"out_channels", s.out_channels}, {"kernel", s.kernel}};
    }
    json operator()(const MaxPool2dSpec& s) const {
      return {{"kind", "max_pool2d"}, {"kernel", s.kernel}, {"stride", s.stride}};
    }
    json operator()(const GlobalAvgPoolSpec&) const { return {{"kind", "global_avg_pool"}}; }
    json operator()(const ReluSpec&) const { return {{"kind", "relu"}}; }
    json operator()(const FlattenSpec&) const { return {{"kind", "flatten"}}; }
    json operator()(const SoftmaxOutputSpec&) const { return {{"kind", "softmax_output"}}; }
    json operator()(const DagBlockSpec& s) const {
      json edges = json::array();
      for (const auto& e : s.edges) {
        json ops = json::array();
        for (const auto& op : e.ops) ops.push_back(layer_to_json(op));
        edges.push_back({{"from", e.from}, {"to", e.to}, {"ops", ops}});
      }
      return {{"kind", "dag_block"}, {"num_nodes", s.num_nodes}, {"edges", edges}};
    }
  };
  return std::visit(Visitor{}, spec.kind);
}

LayerSpec layer_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "dense") return {DenseSpec{j.at("units").get<std::size_t>()}};
  if (kind == "conv2d") {
    const auto& k = j.at("kernel");
    return {Conv2dSpec{j.at("out_channels").get<std::size_t>(), k.at(0).get<std::size_t>(),
                       k.at(1).get<std::size_t>(), j.at("stride").get<std::size_t>()}};
  }
  if (kind == "separable_conv2d")
    return {SeparableConv2dSpec{j.at("out_channels").get<std::size_t>(), j.at("kernel").get<std::size_t>()}};
  if (kind == "max_pool2d")
    return {MaxPool2dSpec{j.at("kernel").get<std::size_t>(), j.at("stride").get<std::size_t>()}};
  if (kind == "global_avg_pool") return {GlobalAvgPoolSpec{}};
  if (kind == "relu") return {ReluSpec{}};
  if (kind == "flatten") return {FlattenSpec{}};
  if (kind == "softmax_output") return {SoftmaxOutputSpec{}};
  if (kind == "dag_block") {
    DagBlockSpec block;
    block.num_nodes = j.at("num_nodes").get<std::size_t>();
    for (const auto& e : j.at("edges")) {
      DagEdgeSpec edge;
      edge.from = e.at("from").get<std::size_t>();
      edge.to = e.at("to").get<std::size_t>();
      for (const auto& op : e.at("ops")) edge.ops.push_back(layer_from_json(op));
      block.edges.push_back(std::move(edge));
    }
    return {block};
  }
  throw DataError("unknown layer kind '" + kind + "'");
}

json checkpoint_to_json(const Checkpoint& ckpt) {
  const Network& net = ckpt.network;
  json layers = json::array();
  for (const auto& spec : net.specs()) layers.push_back(layer_to_json(spec));
  const Shape& in = net.input_shape();
  json j;
  j["format"] = "tasknas-checkpoint";
  j["format_version"] = 1;
  j["input_shape"] = {in.channels, in.height, in.width};
  j["layers"] = layers;
  j["param_count"] = net.param_count();
  j["theta"] = std::vector<double>(net.theta().begin(), net.theta().end());
  j["seed"] = ckpt.seed;
  j["metadata"] = ckpt.metadata;
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "tasknas-checkpoint") throw DataError("not a tasknas checkpoint");
    if (j.at("format_version").get<int>() != 1) throw DataError("unsupported checkpoint version");
    const auto& s = j.at("input_shape");
    const Shape in{s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(), s.at(2).get<std::size_t>()};
    std::vector<LayerSpec> specs;
    for (const auto& l : j.at("layers")) specs.push_back(layer_from_json(l));
    Checkpoint ckpt;
    ckpt.network = Network(in, std::move(specs));
    ckpt.network.set_theta(j.at("theta").get<std::vector<double>>());
    ckpt.seed = j.at("seed").get<std::uint64_t>();
    ckpt.metadata = j.value("metadata", json::object());
    return ckpt;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, checkpoint_to_json(ckpt).dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw DataError("cannot parse " + path.string() + ": " + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace tasknas
