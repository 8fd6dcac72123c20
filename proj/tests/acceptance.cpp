// Acceptance run: one PASS/FAIL (or WARN) line per criterion. Exit status is
// nonzero when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "tasknas/errors.hpp"
#include "tasknas/experiment.hpp"

using namespace tasknas;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  std::string status;  // PASS, FAIL or WARN
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome verdict(bool ok, std::string detail) { return {ok ? "PASS" : "FAIL", std::move(detail)}; }

struct Options {
  fs::path work = "acceptance_work";
  std::string mnist_dir;
  std::string cifar_dir;
};

RunConfig base_config(const Options& opt, const std::string& name) {
  RunConfig c;
  if (opt.mnist_dir.empty() || opt.cifar_dir.empty()) {
    c.synthetic = true;
  } else {
    c.mnist_dir = opt.mnist_dir;
    c.cifar_dir = opt.cifar_dir;
  }
  c.subsample = 2000;
  c.trials = 3;
  c.random_search_k = 0;
  c.out = (opt.work / name).string();
  fs::remove_all(c.out);
  return c;
}

// 1. loglik_grad against central differences on 100 random nets.
Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& foci = oracle::focus_names();
  double worst = 0.0;
  std::size_t redraws = 0, failures = 0;
  std::string worst_focus;
  for (std::size_t i = 0; i < 100; ++i) {
    auto c = oracle::random_grad_case(20000 + i, foci[i % foci.size()]);
    auto r = oracle::check_gradient(c.net, c.sample, c.label);
    for (int redraw = 0; r.rel_error >= 1e-4 && r.kink && redraw < 5; ++redraw) {
      Rng rng(mix_seed(i, redraw));
      c.sample = oracle::random_sample(rng, c.sample.size());
      r = oracle::check_gradient(c.net, c.sample, c.label);
      ++redraws;
    }
    if (r.rel_error >= 1e-4) ++failures;
    if (r.rel_error > worst) {
      worst = r.rel_error;
      worst_focus = c.focus;
    }
  }
  const double secs = seconds_since(t0);
  return verdict(failures == 0 && secs < 120,
                 "100 nets, " + std::to_string(foci.size()) + " foci, max rel err " + fmt("%.2e", worst) + " (" +
                     worst_focus + "), " + std::to_string(redraws) + " kink redraws, " + fmt("%.1f", secs) +
                     "s (limit 120s)");
}

// 2. Fisher diagonal against the explicit outer-product average.
Outcome fisher_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& foci = oracle::focus_names();
  double worst = 0.0;
  std::size_t max_params = 0;
  bool sizes_ok = true;
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto c = oracle::random_grad_case(30000 + s, foci[s % foci.size()], 50);
    Rng rng(mix_seed(s, 2));
    const std::size_t M = 1 + rng.index(32);
    const LabeledDataset d = oracle::random_dataset(rng, c.net.input_shape(), M, c.net.num_outputs());
    const auto expect = oracle::brute_fisher_diag(c.net, d);
    const auto got = empirical_fisher_diag(c.net, d, M, s).values;
    sizes_ok = sizes_ok && got.size() == expect.size() && c.net.param_count() <= 50;
    max_params = std::max(max_params, c.net.param_count());
    for (std::size_t j = 0; j < std::min(got.size(), expect.size()); ++j)
      worst = std::max(worst, std::abs(got[j] - expect[j]));
  }
  const double secs = seconds_since(t0);
  return verdict(sizes_ok && worst <= 1e-10 && secs < 60,
                 "50 cases, <= " + std::to_string(max_params) + " params, max |diff| " + fmt("%.2e", worst) +
                     " (tol 1e-10), " + fmt("%.2f", secs) + "s (limit 60s)");
}

FisherDiagonal diag_of(std::vector<double> v) {
  FisherDiagonal f;
  f.values = std::move(v);
  return f;
}

// 3. Identity, nonnegativity, ratio-form equivalence and pairing invariance.
Outcome distance_properties() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(4242);
  bool identity = true;
  double min_d = INFINITY, eq_err = 0.0, perm_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.index(64);
    std::vector<double> a(n), b(n);
    for (double& v : a) v = std::exp(rng.uniform(-14.0, 3.0));
    for (double& v : b) v = std::exp(rng.uniform(-14.0, 3.0));
    const double sigma_sq = trial % 2 == 0 ? 1e-6 : std::exp(rng.uniform(-10.0, 1.0));
    identity = identity && distance(diag_of(a), diag_of(a), sigma_sq).value == 0.0;
    const double d = distance(diag_of(a), diag_of(b), sigma_sq).value;
    min_d = std::min(min_d, d);

    std::vector<std::size_t> perm(n);
    for (std::size_t j = 0; j < n; ++j) perm[j] = j;
    rng.shuffle(std::span<std::size_t>(perm));
    std::vector<double> shuffled(n);
    double ratio = 0.0, ratio_perm = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      shuffled[j] = b[perm[j]];
      ratio += std::log((a[j] + sigma_sq) / (b[j] + sigma_sq));
      ratio_perm += std::log((a[j] + sigma_sq) / (shuffled[j] + sigma_sq));
    }
    eq_err = std::max(eq_err, std::abs(d - std::abs(ratio) / static_cast<double>(n)));
    perm_err = std::max(perm_err, std::abs(d - std::abs(ratio_perm) / static_cast<double>(n)));
    perm_err = std::max(perm_err, std::abs(d - distance(diag_of(a), diag_of(shuffled), sigma_sq).value));
  }
  const double secs = seconds_since(t0);
  return verdict(identity && min_d >= 0.0 && eq_err <= 1e-9 && perm_err <= 1e-9 && secs < 30,
                 std::string("d(F,F)=0 ") + (identity ? "exact" : "VIOLATED") + ", min d " + fmt("%.3e", min_d) +
                     " over 1000 pairs, ratio-form err " + fmt("%.1e", eq_err) + ", pairing err " +
                     fmt("%.1e", perm_err) + " (tol 1e-9), " + fmt("%.2f", secs) + "s (limit 30s)");
}

struct MatrixRun {
  DistanceMatrix dm;
  double seconds = 0.0;
};

MatrixRun run_matrix(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  MatrixRun r;
  r.dm = cmd_distance_matrix(cfg);
  r.seconds = seconds_since(t0);
  return r;
}

// 4. Structure of the 4-task MNIST matrix.
Outcome matrix_structure(const MatrixRun& run) {
  const auto& m = run.dm.mean;
  bool diag_zero = true, finite = true;
  double max_asym = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (i == j) {
        diag_zero = diag_zero && m[i][j] == 0.0;
        continue;
      }
      finite = finite && std::isfinite(m[i][j]) && m[i][j] >= 0.0;
      max_asym = std::max(max_asym, std::abs(m[i][j] - m[j][i]));
    }
  return verdict(m.size() == 4 && run.dm.trials == 3 && diag_zero && finite && max_asym > 1e-6 && run.seconds < 1200,
                 std::to_string(m.size()) + "x" + std::to_string(m.size()) + ", " + std::to_string(run.dm.trials) +
                     " trials, diagonal " + (diag_zero ? "exactly 0" : "NONZERO") + ", off-diagonal " +
                     (finite ? "finite and >= 0" : "INVALID") + ", max |d[b,t]-d[t,b]| " + fmt("%.3e", max_asym) +
                     " (need > 1e-6), " + fmt("%.0f", run.seconds) + "s (limit 1200s)");
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

// 5. Within-dataset pairs closer than cross-dataset pairs; warn only.
Outcome same_dataset_affinity(const MatrixRun& run) {
  const auto registry = benchmark_tasks();
  const auto& ids = run.dm.task_ids;
  // Per pair, the median over trials, then the median over pairs.
  std::vector<double> within, across;
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (i == j) continue;
      std::vector<double> trials;
      for (const auto& t : run.dm.per_trial) trials.push_back(t[i][j]);
      const double d = median(trials);
      const bool same = find_task(registry, ids[i]).source == find_task(registry, ids[j]).source;
      (same ? within : across).push_back(d);
    }
  const double w = median(within), a = median(across);
  return {w < a ? "PASS" : "WARN",
          std::to_string(ids.size()) + " tasks, median within-dataset " + fmt("%.4f", w) + " vs cross-dataset " +
              fmt("%.4f", a) + " (3-trial medians, " + fmt("%.0f", run.seconds) + "s)"};
}

bool rows_normalized(const CandidateSet& set, const LabeledDataset& data, double& worst) {
  Tensor x({data.size(), data.sample_shape.size()});
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < data.sample_shape.size(); ++j) x.row(i)[j] = data.image(i)[j];
  const Tensor out = relaxed_forward(set, x);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double total = 0.0;
    for (double v : out.row(i)) total += v;
    worst = std::max(worst, std::abs(total - 1.0));
  }
  return worst <= 1e-6;
}

std::vector<double> theta_of(const Network& n) { return {n.theta().begin(), n.theta().end()}; }

// 6. FUSE phase purity, normalization, rigged selection and |C|=1 reduction.
Outcome fuse_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const DatasetSplit data{oracle::toy_stripes(80, 61), oracle::toy_stripes(40, 62)};
  const Candidate perfect = oracle::perfect_toy_candidate(oracle::toy_stripes(200, 100));
  const double perfect_acc = evaluate(perfect.net, data.val);

  // (a) and (b): step the phases by hand and check after every one.
  bool purity = true;
  double worst_row = 0.0;
  for (std::uint64_t s = 0; s < 3; ++s) {
    std::vector<Candidate> members;
    const auto archs = sample_candidates(oracle::toy_space(), 4, 500 + s);
    for (std::size_t i = 0; i < archs.size(); ++i)
      members.push_back({archs[i], instantiate(archs[i], data.train.sample_shape, mix_seed(s, i)), ""});
    CandidateSet set = CandidateSet::uniform(std::move(members));
    FuseConfig cfg;
    for (std::uint64_t k = 0; k < 4; ++k) {
      const std::vector<double> alpha = set.alpha;
      fuse_step_weights(set, data.train, cfg, k);
      purity = purity && set.alpha == alpha;
      rows_normalized(set, data.val, worst_row);
      std::vector<std::vector<double>> thetas;
      for (const auto& c : set.candidates) thetas.push_back(theta_of(c.net));
      fuse_step_alpha(set, data.val, cfg, k);
      for (std::size_t c = 0; c < set.size(); ++c) purity = purity && theta_of(set.candidates[c].net) == thetas[c];
      rows_normalized(set, data.val, worst_row);
    }
  }

  // (c)
  std::size_t hits = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto out = oracle::rigged_fuse_run(perfect, data, 9000 + s);
    if (out.selected == out.perfect_index) ++hits;
  }

  // (d)
  bool reduction = true;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const ArchitectureSpec arch = sample_candidates(oracle::toy_space(), 1, 700 + s).front();
    const Candidate cand{arch, instantiate(arch, data.train.sample_shape, s), "solo"};
    CandidateSet set = CandidateSet::uniform({cand});
    FuseConfig cfg;
    cfg.seed = 40 + s;
    cfg.inner_epochs_per_phase = 1 + s;
    const FuseResult r = fuse(set, data.train, data.val, cfg);
    // Further weight phases continue the same sequence of seeds.
    for (std::size_t k = r.iterations; k < 3; ++k) fuse_step_weights(set, data.train, cfg, cfg.seed + k);
    Network plain = cand.net;
    for (std::size_t k = 0; k < 3; ++k) {
      TrainConfig tc;
      tc.learning_rate = cfg.w_lr;
      tc.batch_size = cfg.batch_size;
      tc.epochs = cfg.inner_epochs_per_phase;
      tc.seed = cfg.seed + k;
      train(plain, data.train, tc);
    }
    reduction = reduction && theta_of(set.candidates[0].net) == theta_of(plain);
  }

  const double secs = seconds_since(t0);
  return verdict(purity && worst_row <= 1e-6 && hits >= 9 && reduction && secs < 300,
                 std::string("(a) phase purity ") + (purity ? "bitwise" : "VIOLATED") + ", (b) max |row sum - 1| " +
                     fmt("%.1e", worst_row) + " (tol 1e-6), (c) rigged pick " + std::to_string(hits) +
                     "/10 (need 9, perfect val acc " + fmt("%.3f", perfect_acc) + "), (d) |C|=1 " +
                     (reduction ? "bitwise equal" : "DIFFERS") + ", " + fmt("%.1f", secs) + "s (limit 300s)");
}

struct SearchRun {
  SearchResult result;
  double seconds = 0.0;
};

SearchRun run_search(RunConfig cfg) {
  cfg.tasks = {0, 1, 2, 3};
  cfg.target = 2;
  const auto t0 = std::chrono::steady_clock::now();
  SearchRun r;
  r.result = cmd_search(cfg);
  r.seconds = seconds_since(t0);
  return r;
}

// 7. End-to-end search on Task 2 with baselines 0, 1 and 3.
Outcome end_to_end(const SearchRun& run, const fs::path& dir) {
  bool arch_ok = true;
  std::string arch_note;
  try {
    std::ifstream in(dir / "architecture.json");
    architecture_from_json(nlohmann::json::parse(in)).validate();
  } catch (const std::exception& e) {
    arch_ok = false;
    arch_note = std::string(" (") + e.what() + ")";
  }
  const auto& r = run.result;
  const double margin = r.val_accuracy - r.majority_rate;
  return verdict(arch_ok && margin >= 0.10 && run.seconds < 1800,
                 std::string("architecture JSON ") + (arch_ok ? "valid" : "INVALID") + arch_note + ", closest task " +
                     std::to_string(r.closest_task) + ", val acc " + fmt("%.4f", r.val_accuracy) + " vs majority " +
                     fmt("%.4f", r.majority_rate) + " (margin " + fmt("%+.4f", margin) + ", need +0.10), params " +
                     std::to_string(r.best.net.param_count()) + " vs reference " +
                     std::to_string(r.target_net_params) + ", " + fmt("%.0f", run.seconds) + "s (limit 1800s)");
}

std::map<std::string, std::string> artifacts(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).string();
    if (rel == "manifest.json" || rel == "report.csv") continue;  // timing lives here
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    files[rel] = s.str();
  }
  return files;
}

// 8. Byte-identical artifacts on rerun.
Outcome reproducibility(const std::vector<std::pair<fs::path, fs::path>>& pairs) {
  std::size_t compared = 0;
  std::vector<std::string> differing;
  for (const auto& [a, b] : pairs) {
    const auto fa = artifacts(a), fb = artifacts(b);
    for (const auto& [name, bytes] : fa) {
      ++compared;
      const auto it = fb.find(name);
      if (it == fb.end() || it->second != bytes) differing.push_back(a.filename().string() + "/" + name);
    }
    for (const auto& [name, bytes] : fb)
      if (!fa.contains(name)) differing.push_back(b.filename().string() + "/" + name + " (extra)");
  }
  std::string detail = std::to_string(compared) + " CSV/JSON artifacts from criteria 4 and 7 compared";
  if (differing.empty()) {
    detail += ", all byte-identical";
  } else {
    detail += ", differing:";
    for (const auto& d : differing) detail += " " + d;
  }
  return verdict(differing.empty() && compared > 0, detail);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tasknas acceptance run"};
  Options opt;
  std::vector<int> only;
  app.add_option("--work", opt.work, "scratch directory for run artifacts");
  app.add_option("--mnist-dir", opt.mnist_dir, "real MNIST IDX files (synthetic data otherwise)");
  app.add_option("--cifar-dir", opt.cifar_dir, "real CIFAR-10 binary batches");
  app.add_option("--only", only, "run just these criteria");
  CLI11_PARSE(app, argc, argv);

  const auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
  std::map<int, Outcome> outcomes;
  const auto report = [&](int c, const std::function<Outcome()>& f) {
    if (!wanted(c)) return;
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {"FAIL", std::string("threw: ") + e.what()};
    }
    outcomes[c] = o;
    std::cout << "criterion " << c << ": " << o.status << "  " << o.detail << std::endl;
  };

  fs::create_directories(opt.work);
  report(1, gradient_suite);
  report(2, fisher_oracle);
  report(3, distance_properties);

  const auto matrix_cfg = [&](const std::string& name) {
    RunConfig c = base_config(opt, name);
    c.tasks = {0, 1, 2, 3};
    return c;
  };
  report(4, [&] { return matrix_structure(run_matrix(matrix_cfg("c4_matrix"))); });
  report(5, [&] {
    RunConfig c = base_config(opt, "c5_matrix8");
    c.tasks = {0, 1, 2, 3, 4, 5, 6, 7};
    return same_dataset_affinity(run_matrix(c));
  });
  report(6, fuse_correctness);
  report(7, [&] { return end_to_end(run_search(base_config(opt, "c7_search")), opt.work / "c7_search"); });
  report(8, [&] {
    std::vector<std::pair<fs::path, fs::path>> pairs;
    if (!wanted(4)) run_matrix(matrix_cfg("c4_matrix"));
    run_matrix(matrix_cfg("c4_matrix_rerun"));
    pairs.push_back({opt.work / "c4_matrix", opt.work / "c4_matrix_rerun"});
    if (!wanted(7)) run_search(base_config(opt, "c7_search"));
    run_search(base_config(opt, "c7_search_rerun"));
    pairs.push_back({opt.work / "c7_search", opt.work / "c7_search_rerun"});
    return reproducibility(pairs);
  });

  std::size_t failed = 0;
  for (const auto& [c, o] : outcomes) failed += o.status == "FAIL";
  std::cout << (failed == 0 ? "acceptance: all criteria met" : "acceptance: " + std::to_string(failed) + " failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
