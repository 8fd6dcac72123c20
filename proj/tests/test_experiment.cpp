#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tasknas/errors.hpp"
#include "tasknas/experiment.hpp"

using namespace tasknas;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tasknas_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

/// Small enough to run the whole pipeline in seconds.
RunConfig tiny_config(const fs::path& out) {
  RunConfig c;
  c.synthetic = true;
  c.synthetic_count = 200;
  c.tasks = {0, 2};
  c.target = 2;
  c.subsample = 150;
  c.trials = 1;
  c.epochs = 1;
  c.epsilon = 0.6;
  c.fisher_samples = 40;
  c.rounds = 1;
  c.candidates = 2;
  c.fuse_max_inner_iters = 1;
  c.search_train_limit = 60;
  c.random_search_k = 1;
  c.random_search_epochs = 1;
  c.out = out.string();
  return c;
}

std::string result_row(const std::string& method) {
  return R"({"method": ")" + method +
         R"(", "dataset": "mnist", "target_task": 2, "val_accuracy": 0.75, "param_count": 1200})";
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TASKNAS_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c;
  const RunConfig back = RunConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  EXPECT_EQ(back.to_json().dump(), c.to_json().dump());
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, OverridesAndRejections) {
  const auto c = RunConfig::from_json(nlohmann::json::parse(R"({"tasks": [0, 3], "sigma_sq": 0.01, "trials": 2})"));
  EXPECT_EQ(c.tasks, (std::vector<int>{0, 3}));
  EXPECT_DOUBLE_EQ(c.sigma_sq, 0.01);
  EXPECT_EQ(c.trials, 2u);
  EXPECT_EQ(c.distance_config().sigma_sq, 0.01);

  EXPECT_THROW(RunConfig::from_json(nlohmann::json::parse(R"({"sigma": 1})")), UsageError);
  EXPECT_THROW(RunConfig::from_json(nlohmann::json::parse(R"({"trials": -1})")), UsageError);
  EXPECT_THROW(RunConfig::from_json(nlohmann::json::parse(R"({"epsilon": "big"})")), UsageError);
  EXPECT_THROW(RunConfig::from_json(nlohmann::json::parse("[1]")), UsageError);

  RunConfig bad;
  bad.tasks = {0, 42};
  EXPECT_THROW(bad.validate(), UsageError);
  bad = RunConfig{};
  bad.target = 9;
  EXPECT_THROW(bad.validate(), UsageError);
}

TEST(Config, LoadFromFile) {
  const fs::path dir = fresh_dir("config");
  write(dir / "run.json", R"({"seed": 7, "synthetic": true})");
  const RunConfig c = load_run_config(dir / "run.json");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_TRUE(c.synthetic);
  write(dir / "broken.json", "{");
  EXPECT_THROW(load_run_config(dir / "broken.json"), UsageError);
  EXPECT_THROW(load_run_config(dir / "absent.json"), UsageError);
}

TEST(Manifest, SectionsMerge) {
  const fs::path dir = fresh_dir("manifest");
  RunConfig cfg;
  nlohmann::ordered_json a;
  a["x"] = 1;
  update_manifest(dir, "first", cfg, a);
  update_manifest(dir, "second", cfg, nlohmann::ordered_json::object());
  const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["format"], "tasknas-manifest");
  EXPECT_EQ(m["format_version"], 1);
  EXPECT_EQ(m["tool_version"], kToolVersion);
  EXPECT_EQ(m["sections"]["first"]["x"], 1);
  EXPECT_TRUE(m["sections"]["first"]["completed"]);
  EXPECT_TRUE(m["sections"]["second"]["completed"]);
  EXPECT_EQ(m["config"]["seed"], 0);
  for (const auto& entry : fs::directory_iterator(dir))
    EXPECT_EQ(entry.path().filename(), "manifest.json") << "stray file " << entry.path();
}

TEST(Report, EmptyDirListsMissingArtifacts) {
  const fs::path dir = fresh_dir("report_empty");
  try {
    cmd_report(dir);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string what = e.what();
    for (const char* name : {"search_result.json", "random_search.json", "reference.json"})
      EXPECT_NE(what.find(name), std::string::npos) << what;
  }
  EXPECT_FALSE(fs::exists(dir / "report.csv"));
}

TEST(Report, RowsShareOneSchema) {
  const fs::path dir = fresh_dir("report_rows");
  write(dir / "search_result.json", result_row("searched"));
  cmd_report(dir);
  EXPECT_EQ(slurp(dir / "report.csv"),
            "method,dataset,task_id,val_accuracy,param_count,params_millions,seconds\n"
            "searched,mnist,2,0.75,1200,0.001200,\n");

  write(dir / "random_search.json", result_row("random_search"));
  const std::string table = cmd_report(dir);
  std::istringstream csv(slurp(dir / "report.csv"));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 3u);
  for (const auto& l : lines) EXPECT_EQ(std::count(l.begin(), l.end(), ','), 6) << l;
  EXPECT_EQ(lines[2].rfind("random_search,", 0), 0u);
  EXPECT_NE(table.find("random_search"), std::string::npos);
}

TEST(Report, WallClockFromManifest) {
  const fs::path dir = fresh_dir("report_seconds");
  write(dir / "search_result.json", result_row("searched"));
  nlohmann::ordered_json body;
  body["search_seconds"] = 12.34;
  update_manifest(dir, "search", RunConfig{}, body);
  cmd_report(dir);
  EXPECT_NE(slurp(dir / "report.csv").find(",0.001200,12.3\n"), std::string::npos);
}

TEST(Pipeline, TinySyntheticRunIsReproducible) {
  const fs::path a = fresh_dir("pipeline_a");
  const fs::path b = fresh_dir("pipeline_b");
  std::vector<BaselineSummary> summary;
  for (const fs::path& dir : {a, b}) {
    const RunConfig cfg = tiny_config(dir);
    summary = cmd_train_baselines(cfg);
    const DistanceMatrix dm = cmd_distance_matrix(cfg);
    for (std::size_t i = 0; i < dm.mean.size(); ++i) EXPECT_EQ(dm.mean[i][i], 0.0);
    cmd_search(cfg);
    cmd_report(dir);
  }
  ASSERT_EQ(summary.size(), 2u);
  for (const char* f : {"checkpoints/task_0.json", "checkpoints/task_2.json", "mean.csv", "std.csv",
                        "distance_matrix.json", "architecture.json", "search_result.json", "search_log.jsonl",
                        "final_network.json", "random_search.json", "reference.json"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_EQ(slurp(a / "std.csv"), "from\\to,0:mnist_digit0,2:mnist_odd_even\n0:mnist_digit0,0,0\n2:mnist_odd_even,0,0\n");
  EXPECT_NO_THROW(architecture_from_json(nlohmann::json::parse(slurp(a / "architecture.json"))));

  const auto m = nlohmann::json::parse(slurp(a / "manifest.json"));
  for (const char* s : {"train_baselines", "distance_matrix", "search"}) EXPECT_TRUE(m["sections"][s]["completed"]) << s;
  EXPECT_TRUE(m["sections"]["search"].contains("seconds"));
  EXPECT_EQ(slurp(a / "search_result.json").find("seconds"), std::string::npos);
}

TEST(Pipeline, SearchWithSingleBaseline) {
  const fs::path dir = fresh_dir("pipeline_single");
  const RunConfig cfg = tiny_config(dir);
  const SearchResult r = cmd_search(cfg);
  EXPECT_EQ(r.closest_task, 0);
  const auto j = nlohmann::json::parse(slurp(dir / "search_result.json"));
  EXPECT_EQ(j["closest_task"], 0);
  EXPECT_EQ(j["target_task"], 2);
  EXPECT_EQ(j["param_count"], r.best.net.param_count());
}

TEST(Cli, ExitCodes) {
  const fs::path dir = fresh_dir("cli");
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("report --out " + (dir / "empty").string()), 2);
  write(dir / "bad.json", R"({"no_such_key": 1})");
  EXPECT_EQ(run_cli("search --config " + (dir / "bad.json").string()), 1);
  EXPECT_EQ(run_cli("train-baselines --tasks 0,99 --synthetic --out " + dir.string()), 1);
  EXPECT_EQ(run_cli("train-baselines --out " + (dir / "nodata").string()), 2);

  write(dir / "search_result.json", result_row("searched"));
  EXPECT_EQ(run_cli("report --out " + dir.string()), 0);
  EXPECT_TRUE(fs::exists(dir / "report.csv"));
}
