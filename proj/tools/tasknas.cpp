// Command-line front end: train-baselines, distance-matrix, search, report.

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "tasknas/errors.hpp"
#include "tasknas/experiment.hpp"

namespace {

std::vector<int> parse_task_list(const std::string& text) {
  std::vector<int> ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      ids.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw tasknas::UsageError("bad task id '" + item + "' in --tasks");
    }
  }
  if (ids.empty()) throw tasknas::UsageError("--tasks is empty");
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-distance guided architecture search"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool synthetic = false;
  std::string tasks;
  std::optional<int> target;
  std::string out;
  app.add_option("--config", config_path, "flat JSON run config");
  app.add_option("--seed", seed, "base seed");
  app.add_flag("--synthetic", synthetic, "use generated MNIST/CIFAR-shaped data");
  app.add_option("--tasks", tasks, "comma-separated task ids");
  app.add_option("--target", target, "target task id for search");
  app.add_option("--out", out, "run directory");

  auto* train = app.add_subcommand("train-baselines", "train the stand-in network of every task");
  auto* matrix = app.add_subcommand("distance-matrix", "pairwise task distances over several trials");
  auto* search = app.add_subcommand("search", "architecture search for the target task");
  auto* report = app.add_subcommand("report", "comparison table of a run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (report->parsed()) {
      std::string dir = out;
      if (dir.empty() && !config_path.empty()) dir = tasknas::load_run_config(config_path).out;
      if (dir.empty()) throw tasknas::UsageError("report needs --out <run dir> or --config");
      std::cout << tasknas::cmd_report(dir);
      return 0;
    }

    tasknas::RunConfig cfg = config_path.empty() ? tasknas::RunConfig{} : tasknas::load_run_config(config_path);
    if (seed) cfg.seed = *seed;
    if (synthetic) cfg.synthetic = true;
    if (!tasks.empty()) cfg.tasks = parse_task_list(tasks);
    if (target) cfg.target = *target;
    if (!out.empty()) cfg.out = out;

    if (train->parsed()) {
      const auto summary = tasknas::cmd_train_baselines(cfg);
      for (const auto& s : summary)
        std::cout << "task " << s.task_id << " " << s.task_name << " accuracy " << s.val_accuracy
                  << (s.epsilon_approx ? " ok" : " below 1-epsilon") << "\n";
    } else if (matrix->parsed()) {
      const auto m = tasknas::cmd_distance_matrix(cfg);
      std::cout << "wrote " << cfg.out << "/mean.csv and std.csv (" << m.task_ids.size() << " tasks, " << m.trials
                << " trials)\n";
    } else if (search->parsed()) {
      const auto r = tasknas::cmd_search(cfg);
      std::cout << "closest task " << r.closest_task << ", val accuracy " << r.val_accuracy << " (majority "
                << r.majority_rate << "), " << r.best.net.param_count() << " params, stop: "
                << r.state.stop_reason << "\n";
    }
    return 0;
  } catch (const tasknas::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const tasknas::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const tasknas::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  }
}
