#include "tasknas/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "tasknas/checkpoint.hpp"
#include "tasknas/errors.hpp"
#include "tasknas/rng.hpp"

namespace tasknas {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

template <typename T>
T get_as(const nlohmann::json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw UsageError("config key '" + key + "' has the wrong type");
  }
}

std::size_t get_count(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number_unsigned()) throw UsageError("config key '" + key + "' must be a nonnegative integer");
  return v.get<std::size_t>();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

fs::path prepare_out(const RunConfig& cfg) {
  const fs::path out(cfg.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw UsageError("cannot create output directory " + out.string());
  return out;
}

fs::path checkpoint_path(const fs::path& out, int task_id) {
  return out / "checkpoints" / ("task_" + std::to_string(task_id) + ".json");
}

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

struct TrainedBaseline {
  Network net;
  double accuracy = 0.0;
  std::uint64_t seed = 0;
};

// Seeds match trial 0 of distance_matrix, so checkpoints and the first trial agree.
TrainedBaseline train_baseline(const TaskData& t, const RunConfig& cfg) {
  const std::uint64_t net_seed = trial_net_seed(cfg.seed, 0, t.task.id);
  TrainedBaseline out{small_convnet_factory()(t.task, t.data.train.sample_shape, net_seed), 0.0, net_seed};
  TrainConfig tc = cfg.train_config();
  tc.seed = mix_seed(net_seed, 0x7a1);
  train(out.net, t.data.train, tc);
  out.accuracy = evaluate(out.net, t.data.val);
  return out;
}

ojson distance_json(const PipelineResult& pr) {
  ojson j;
  j["from_task"] = pr.entry.from_task;
  j["to_task"] = pr.entry.to_task;
  j["distance"] = pr.entry.value;
  j["baseline_accuracy"] = pr.baseline_accuracy;
  j["target_accuracy"] = pr.target_accuracy;
  j["baseline_is_approx"] = pr.baseline_is_approx;
  return j;
}

ojson round_json(const RoundRecord& r) {
  ojson j;
  j["round"] = r.round;
  j["candidates"] = r.candidate_ids;
  j["alpha"] = r.alpha;
  j["mixture_weights"] = r.mixture_weights;
  j["train_loss"] = r.train_loss;
  j["val_loss"] = r.val_loss;
  j["inner_iterations"] = r.inner_iterations;
  j["incumbent"] = r.incumbent_id;
  j["incumbent_changed"] = r.incumbent_changed;
  j["incumbent_val_accuracy"] = r.incumbent_val_accuracy;
  return j;
}

std::string dataset_label(const TaskSpec& task) { return to_string(task.source); }

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  RunConfig c;
  using Setter = std::function<void(RunConfig&, const nlohmann::json&, const std::string&)>;
  const auto str = [](std::string RunConfig::*m) -> Setter {
    return [m](RunConfig& r, const nlohmann::json& v, const std::string& k) { r.*m = get_as<std::string>(v, k); };
  };
  const auto real = [](double RunConfig::*m) -> Setter {
    return [m](RunConfig& r, const nlohmann::json& v, const std::string& k) {
      if (!v.is_number()) throw UsageError("config key '" + k + "' must be a number");
      r.*m = v.get<double>();
    };
  };
  const auto count = [](std::size_t RunConfig::*m) -> Setter {
    return [m](RunConfig& r, const nlohmann::json& v, const std::string& k) { r.*m = get_count(v, k); };
  };
  const std::map<std::string, Setter> setters{
      {"mnist_dir", str(&RunConfig::mnist_dir)},
      {"cifar_dir", str(&RunConfig::cifar_dir)},
      {"synthetic", [](RunConfig& r, const nlohmann::json& v, const std::string& k) { r.synthetic = get_as<bool>(v, k); }},
      {"synthetic_count", count(&RunConfig::synthetic_count)},
      {"tasks", [](RunConfig& r, const nlohmann::json& v, const std::string& k) { r.tasks = get_as<std::vector<int>>(v, k); }},
      {"target", [](RunConfig& r, const nlohmann::json& v, const std::string& k) { r.target = get_as<int>(v, k); }},
      {"seed", [](RunConfig& r, const nlohmann::json& v, const std::string& k) { r.seed = get_count(v, k); }},
      {"sigma_sq", real(&RunConfig::sigma_sq)},
      {"epsilon", real(&RunConfig::epsilon)},
      {"trials", count(&RunConfig::trials)},
      {"subsample", count(&RunConfig::subsample)},
      {"val_fraction", real(&RunConfig::val_fraction)},
      {"fisher_samples", count(&RunConfig::fisher_samples)},
      {"fisher_labels", str(&RunConfig::fisher_labels)},
      {"learning_rate", real(&RunConfig::learning_rate)},
      {"batch_size", count(&RunConfig::batch_size)},
      {"epochs", count(&RunConfig::epochs)},
      {"grad_clip", real(&RunConfig::grad_clip)},
      {"fuse_w_lr", real(&RunConfig::fuse_w_lr)},
      {"fuse_alpha_lr", real(&RunConfig::fuse_alpha_lr)},
      {"fuse_batch_size", count(&RunConfig::fuse_batch_size)},
      {"fuse_epochs_per_phase", count(&RunConfig::fuse_epochs_per_phase)},
      {"fuse_alpha_tol", real(&RunConfig::fuse_alpha_tol)},
      {"fuse_max_inner_iters", count(&RunConfig::fuse_max_inner_iters)},
      {"selection", str(&RunConfig::selection)},
      {"rounds", count(&RunConfig::rounds)},
      {"patience", count(&RunConfig::patience)},
      {"candidates", count(&RunConfig::candidates)},
      {"search_train_limit", count(&RunConfig::search_train_limit)},
      {"final_epochs", count(&RunConfig::final_epochs)},
      {"stem_channels", count(&RunConfig::stem_channels)},
      {"random_search_k", count(&RunConfig::random_search_k)},
      {"random_search_epochs", count(&RunConfig::random_search_epochs)},
      {"out", str(&RunConfig::out)},
  };
  for (const auto& [key, value] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw UsageError("unknown config key '" + key + "'");
    it->second(c, value, key);
  }
  return c;
}

ojson RunConfig::to_json() const {
  ojson j;
  j["mnist_dir"] = mnist_dir;
  j["cifar_dir"] = cifar_dir;
  j["synthetic"] = synthetic;
  j["synthetic_count"] = synthetic_count;
  j["tasks"] = tasks;
  j["target"] = target;
  j["seed"] = seed;
  j["sigma_sq"] = sigma_sq;
  j["epsilon"] = epsilon;
  j["trials"] = trials;
  j["subsample"] = subsample;
  j["val_fraction"] = val_fraction;
  j["fisher_samples"] = fisher_samples;
  j["fisher_labels"] = fisher_labels;
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["grad_clip"] = grad_clip;
  j["fuse_w_lr"] = fuse_w_lr;
  j["fuse_alpha_lr"] = fuse_alpha_lr;
  j["fuse_batch_size"] = fuse_batch_size;
  j["fuse_epochs_per_phase"] = fuse_epochs_per_phase;
  j["fuse_alpha_tol"] = fuse_alpha_tol;
  j["fuse_max_inner_iters"] = fuse_max_inner_iters;
  j["selection"] = selection;
  j["rounds"] = rounds;
  j["patience"] = patience;
  j["candidates"] = candidates;
  j["search_train_limit"] = search_train_limit;
  j["final_epochs"] = final_epochs;
  j["stem_channels"] = stem_channels;
  j["random_search_k"] = random_search_k;
  j["random_search_epochs"] = random_search_epochs;
  j["out"] = out;
  return j;
}

void RunConfig::validate() const {
  const auto registry = benchmark_tasks();
  if (tasks.empty()) throw UsageError("no tasks configured");
  std::set<int> seen;
  for (const int id : tasks) {
    find_task(registry, id);
    if (!seen.insert(id).second) throw UsageError("task " + std::to_string(id) + " listed twice");
  }
  find_task(registry, target);
  if (trials == 0) throw UsageError("trials must be at least 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw UsageError("val_fraction must lie in (0, 1)");
  if (synthetic && synthetic_count < 2) throw UsageError("synthetic_count must be at least 2");
  if (stem_channels == 0) throw UsageError("stem_channels must be positive");
  if (out.empty()) throw UsageError("output directory is empty");
  parse_fisher_labels(fisher_labels);
  parse_selection_rule(selection);
  train_config().validate();
  search_config().validate();
}

TrainConfig RunConfig::train_config() const {
  TrainConfig tc;
  tc.learning_rate = learning_rate;
  tc.batch_size = batch_size;
  tc.epochs = epochs;
  tc.grad_clip = grad_clip;
  tc.seed = seed;
  return tc;
}

DistanceConfig RunConfig::distance_config() const {
  DistanceConfig dc;
  dc.train = train_config();
  dc.sigma_sq = sigma_sq;
  dc.epsilon = epsilon;
  dc.fisher_samples = fisher_samples;
  dc.labels = parse_fisher_labels(fisher_labels);
  dc.seed = seed;
  return dc;
}

SearchConfig RunConfig::search_config() const {
  SearchConfig sc;
  sc.distance = distance_config();
  sc.fuse.w_lr = fuse_w_lr;
  sc.fuse.alpha_lr = fuse_alpha_lr;
  sc.fuse.grad_clip = grad_clip;
  sc.fuse.batch_size = fuse_batch_size;
  sc.fuse.inner_epochs_per_phase = fuse_epochs_per_phase;
  sc.fuse.alpha_tol = fuse_alpha_tol;
  sc.fuse.max_inner_iters = fuse_max_inner_iters;
  sc.fuse.selection = parse_selection_rule(selection);
  sc.fuse.seed = seed;
  sc.final_train = train_config();
  sc.final_train.epochs = final_epochs;
  sc.final_train.seed = mix_seed(seed, 0xF1A1);
  sc.candidates = candidates;
  sc.max_rounds = rounds;
  sc.patience = patience;
  sc.search_train_limit = search_train_limit;
  sc.seed = seed;
  return sc;
}

ArchitectureSpec RunConfig::baseline_architecture(std::size_t num_classes) const {
  ArchitectureSpec arch = default_architecture(num_classes);
  arch.skeleton.stem_channels = stem_channels;
  return arch;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return RunConfig::from_json(j);
}

std::vector<TaskData> load_task_data(const RunConfig& cfg, const std::vector<int>& task_ids) {
  const auto registry = benchmark_tasks();
  std::map<DataSource, LabeledDataset> raw;
  const auto source_data = [&](DataSource src) -> const LabeledDataset& {
    auto it = raw.find(src);
    if (it != raw.end()) return it->second;
    LabeledDataset data;
    const auto salt = static_cast<std::uint64_t>(src);
    if (cfg.synthetic) {
      data = src == DataSource::mnist ? synthetic_mnist(cfg.synthetic_count, mix_seed(0xDA7A, salt))
                                      : synthetic_cifar10(cfg.synthetic_count, mix_seed(0xDA7A, salt));
    } else {
      const std::string& dir = src == DataSource::mnist ? cfg.mnist_dir : cfg.cifar_dir;
      if (dir.empty())
        throw DataError("no " + to_string(src) + " directory configured; set it or pass --synthetic");
      data = src == DataSource::mnist ? load_mnist(dir, true) : load_cifar10(dir, true);
    }
    return raw.emplace(src, std::move(data)).first->second;
  };

  std::vector<TaskData> out;
  for (const int id : task_ids) {
    const TaskSpec& task = find_task(registry, id);
    const LabeledDataset& source = source_data(task.source);
    SplitConfig sc;
    sc.val_fraction = cfg.val_fraction;
    if (cfg.subsample > 0) sc.subsample = cfg.subsample;
    sc.seed = mix_seed(cfg.seed, 0x5B17 + static_cast<std::uint64_t>(task.source));
    DatasetSplit parts = split(derive_task(source, task), sc);
    if (task.source == DataSource::mnist) {
      parts.train = adapt_mnist_to_rgb32(parts.train);
      parts.val = adapt_mnist_to_rgb32(parts.val);
    }
    out.push_back({task, std::move(parts)});
  }
  return out;
}

void update_manifest(const fs::path& out, const std::string& section, const RunConfig& cfg, ojson body) {
  const fs::path path = out / "manifest.json";
  ojson manifest;
  if (fs::exists(path)) {
    try {
      manifest = ojson::parse(read_file(path));
    } catch (const nlohmann::json::parse_error&) {
      manifest = ojson();
    }
  }
  if (!manifest.is_object() || !manifest.contains("sections")) {
    manifest = ojson();
    manifest["format"] = "tasknas-manifest";
    manifest["format_version"] = 1;
    manifest["sections"] = ojson::object();
  }
  manifest["tool_version"] = kToolVersion;
  manifest["config"] = cfg.to_json();
  body["completed"] = true;
  manifest["sections"][section] = std::move(body);
  write_file_atomic(path, dump(manifest));
}

std::vector<BaselineSummary> cmd_train_baselines(const RunConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const fs::path out = prepare_out(cfg);
  fs::create_directories(out / "checkpoints");
  const auto tasks = load_task_data(cfg, cfg.tasks);

  std::vector<BaselineSummary> summary;
  ojson rows = ojson::array();
  for (const auto& t : tasks) {
    TrainedBaseline b = train_baseline(t, cfg);
    BaselineSummary s{t.task.id, t.task.name, b.accuracy, b.accuracy >= 1.0 - cfg.epsilon};
    std::clog << "task " << s.task_id << " (" << s.task_name << "): val accuracy " << s.val_accuracy
              << (s.epsilon_approx ? "" : " [below 1 - epsilon]") << "\n";
    Checkpoint ckpt{std::move(b.net), b.seed, nlohmann::json::object()};
    ckpt.metadata["task_id"] = s.task_id;
    ckpt.metadata["task_name"] = s.task_name;
    ckpt.metadata["val_accuracy"] = s.val_accuracy;
    ckpt.metadata["epsilon_approx"] = s.epsilon_approx;
    save_checkpoint(checkpoint_path(out, s.task_id), ckpt);
    ojson row;
    row["task_id"] = s.task_id;
    row["task_name"] = s.task_name;
    row["val_accuracy"] = s.val_accuracy;
    row["epsilon_approx"] = s.epsilon_approx;
    rows.push_back(row);
    summary.push_back(s);
  }
  ojson body;
  body["tasks"] = rows;
  body["epsilon"] = cfg.epsilon;
  body["seconds"] = seconds_since(start);
  update_manifest(out, "train_baselines", cfg, std::move(body));
  return summary;
}

DistanceMatrix cmd_distance_matrix(const RunConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const fs::path out = prepare_out(cfg);
  const auto tasks = load_task_data(cfg, cfg.tasks);
  const DistanceMatrix m = distance_matrix(tasks, cfg.trials, cfg.distance_config(), small_convnet_factory());

  std::vector<std::string> names;
  for (const auto& t : tasks) names.push_back(std::to_string(t.task.id) + ":" + t.task.name);
  write_file_atomic(out / "mean.csv", matrix_csv(m.mean, names));
  write_file_atomic(out / "std.csv", matrix_csv(m.std, names));

  ojson detail;
  detail["format"] = "tasknas-distance-matrix";
  detail["format_version"] = 1;
  detail["task_ids"] = m.task_ids;
  detail["task_names"] = m.task_names;
  detail["trials"] = m.trials;
  detail["sigma_sq"] = cfg.sigma_sq;
  detail["fisher_labels"] = cfg.fisher_labels;
  detail["trial_seeds"] = m.trial_seeds;
  detail["mean"] = m.mean;
  detail["std"] = m.std;
  detail["per_trial"] = m.per_trial;
  detail["accuracy"] = m.accuracy;
  write_file_atomic(out / "distance_matrix.json", dump(detail));

  ojson body;
  body["tasks"] = m.task_ids;
  body["trials"] = m.trials;
  body["sigma_sq"] = cfg.sigma_sq;
  body["seconds"] = seconds_since(start);
  update_manifest(out, "distance_matrix", cfg, std::move(body));
  return m;
}

SearchResult cmd_search(const RunConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const fs::path out = prepare_out(cfg);

  std::vector<int> baseline_ids;
  for (const int id : cfg.tasks)
    if (id != cfg.target) baseline_ids.push_back(id);
  if (baseline_ids.empty()) throw UsageError("search needs at least one baseline task besides the target");
  std::vector<int> ids = baseline_ids;
  ids.push_back(cfg.target);
  auto data = load_task_data(cfg, ids);
  const TaskData target = data.back();
  data.pop_back();

  std::vector<BaselineTask> baselines;
  ojson baseline_rows = ojson::array();
  for (auto& t : data) {
    const fs::path ckpt_path = checkpoint_path(out, t.task.id);
    std::optional<Network> net;
    if (fs::exists(ckpt_path)) {
      Checkpoint ckpt = load_checkpoint(ckpt_path);
      if (ckpt.network.input_shape() == t.data.train.sample_shape &&
          ckpt.network.num_outputs() == t.task.num_classes)
        net = std::move(ckpt.network);
      else
        std::clog << "checkpoint " << ckpt_path.string() << " does not fit task " << t.task.id << "; retraining\n";
    }
    const bool from_checkpoint = net.has_value();
    if (!net) net = train_baseline(t, cfg).net;
    ojson row;
    row["task_id"] = t.task.id;
    row["from_checkpoint"] = from_checkpoint;
    baseline_rows.push_back(row);
    ArchitectureSpec arch = cfg.baseline_architecture(t.task.num_classes);
    baselines.push_back({std::move(t), std::move(*net), std::move(arch)});
  }
  const double baseline_seconds = seconds_since(start);

  std::string log;
  const auto on_round = [&log](const RoundRecord& r) {
    log += round_json(r).dump() + "\n";
    std::clog << "round " << r.round << ": incumbent " << r.incumbent_id << " val accuracy "
              << r.incumbent_val_accuracy << "\n";
  };
  const auto search_start = std::chrono::steady_clock::now();
  const SearchConfig sc = cfg.search_config();
  SearchResult result = nas_main(baselines, target, sc, on_round);
  const double search_seconds = seconds_since(search_start);

  const auto rs_start = std::chrono::steady_clock::now();
  RandomSearchResult rs;
  if (cfg.random_search_k > 0) {
    TrainConfig rtc = cfg.train_config();
    rtc.epochs = cfg.random_search_epochs;
    rs = random_search(result.space, cfg.random_search_k, target, rtc, mix_seed(cfg.seed, 0x5EA5C4));
  }
  const double rs_seconds = seconds_since(rs_start);

  const std::size_t params = result.best.net.param_count();
  const ojson arch = architecture_to_json(result.best.arch);
  write_file_atomic(out / "architecture.json", dump(arch));
  write_file_atomic(out / "search_log.jsonl", log);

  Checkpoint final_ckpt{result.best.net, mix_seed(cfg.seed, 0xF1A1), nlohmann::json::object()};
  final_ckpt.metadata["task_id"] = target.task.id;
  final_ckpt.metadata["candidate"] = result.best.id;
  save_checkpoint(out / "final_network.json", final_ckpt);

  ojson sr;
  sr["format"] = "tasknas-search";
  sr["format_version"] = 1;
  sr["method"] = "searched";
  sr["dataset"] = dataset_label(target.task);
  sr["target_task"] = target.task.id;
  sr["target_name"] = target.task.name;
  sr["closest_task"] = result.closest_task;
  ojson dists = ojson::array();
  for (const auto& pr : result.distances) dists.push_back(distance_json(pr));
  sr["distances"] = dists;
  std::vector<std::string> ops;
  for (const auto op : result.space.allowed_operations) ops.push_back(to_string(op));
  sr["search_space"] = {{"operations", ops},
                        {"cell_nodes", result.space.cell_nodes},
                        {"size", count_architectures(result.space)}};
  ojson rounds = ojson::array();
  for (const auto& r : result.state.history) rounds.push_back(round_json(r));
  sr["rounds"] = rounds;
  sr["stop_reason"] = result.state.stop_reason;
  sr["selected"] = result.best.id;
  sr["val_accuracy"] = result.val_accuracy;
  sr["majority_rate"] = result.majority_rate;
  sr["param_count"] = params;
  sr["reference_param_count"] = result.target_net_params;
  sr["architecture"] = arch;
  write_file_atomic(out / "search_result.json", dump(sr));

  if (cfg.random_search_k > 0) {
    ojson rj;
    rj["format"] = "tasknas-method";
    rj["format_version"] = 1;
    rj["method"] = "random_search";
    rj["dataset"] = dataset_label(target.task);
    rj["target_task"] = target.task.id;
    rj["evaluated"] = rs.evaluated;
    rj["val_accuracy"] = rs.val_accuracy;
    rj["param_count"] = rs.best.net.param_count();
    rj["architecture"] = architecture_to_json(rs.best.arch);
    write_file_atomic(out / "random_search.json", dump(rj));
  }

  ojson ref;
  ref["format"] = "tasknas-method";
  ref["format_version"] = 1;
  ref["method"] = "reference";
  ref["dataset"] = dataset_label(target.task);
  ref["target_task"] = target.task.id;
  ref["network"] = "small_convnet";
  ref["val_accuracy"] = result.target_net_accuracy;
  ref["param_count"] = result.target_net_params;
  write_file_atomic(out / "reference.json", dump(ref));

  ojson body;
  body["target"] = target.task.id;
  body["baselines"] = baseline_rows;
  body["closest_task"] = result.closest_task;
  body["stop_reason"] = result.state.stop_reason;
  body["baseline_seconds"] = baseline_seconds;
  body["search_seconds"] = search_seconds;
  body["random_search_seconds"] = rs_seconds;
  body["seconds"] = seconds_since(start);
  update_manifest(out, "search", cfg, std::move(body));
  return result;
}

std::string cmd_report(const fs::path& run_dir) {
  struct Source {
    const char* file;
    const char* seconds_key;
  };
  const Source sources[] = {{"search_result.json", "search_seconds"},
                            {"random_search.json", "random_search_seconds"},
                            {"reference.json", nullptr}};
  nlohmann::json search_section;
  if (fs::exists(run_dir / "manifest.json")) {
    try {
      const auto manifest = nlohmann::json::parse(read_file(run_dir / "manifest.json"));
      search_section = manifest.at("sections").value("search", nlohmann::json::object());
    } catch (const nlohmann::json::exception&) {
      std::clog << "manifest.json is unreadable; wall-clock column left empty\n";
    }
  }

  std::vector<std::string> missing;
  std::ostringstream csv;
  csv << "method,dataset,task_id,val_accuracy,param_count,params_millions,seconds\n";
  std::ostringstream table;
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %-8s %7s %12s %12s %10s\n", "method", "dataset", "task", "accuracy",
                "params", "seconds");
  table << line;
  std::size_t rows = 0;
  for (const auto& src : sources) {
    const fs::path path = run_dir / src.file;
    if (!fs::exists(path)) {
      missing.push_back(src.file);
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(path.string() + " is not valid JSON: " + e.what());
    }
    const std::string method = j.at("method").get<std::string>();
    const std::string dataset = j.at("dataset").get<std::string>();
    const int task = j.at("target_task").get<int>();
    const double acc = j.at("val_accuracy").get<double>();
    const std::size_t params = j.at("param_count").get<std::size_t>();
    std::string secs;
    if (src.seconds_key != nullptr && search_section.contains(src.seconds_key)) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.1f", search_section[src.seconds_key].get<double>());
      secs = buf;
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(params) / 1e6);
    csv << method << "," << dataset << "," << task << "," << acc << "," << params << "," << buf << "," << secs
        << "\n";
    std::snprintf(line, sizeof line, "%-14s %-8s %7d %12.4f %12zu %10s\n", method.c_str(), dataset.c_str(), task,
                  acc, params, secs.c_str());
    table << line;
    ++rows;
  }
  if (rows == 0) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw DataError("no run artifacts in " + run_dir.string() + "; missing: " + names);
  }
  for (const auto& m : missing) std::clog << "missing artifact: " << m << "\n";
  write_file_atomic(run_dir / "report.csv", csv.str());
  return table.str();
}

}  // namespace tasknas
