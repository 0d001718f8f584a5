// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, then a summary. Exits 0
// only if every selected criterion passes.
//
//   flamkit_acceptance --workdir DIR [--only 1,2,9]

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flamkit/checks.h"
#include "flamkit/evaluation.h"
#include "flamkit/synth.h"
#include "flamkit/train.h"

namespace fs = std::filesystem;
using namespace flamkit;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Criterion {
  int id = 0;
  std::string title;
  bool pass = false;
  std::string summary;
  nlohmann::json detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

// Folds sub-checks into one criterion line.
Criterion from_checks(int id, const std::string& title, const std::vector<CheckResult>& checks,
                      double max_seconds = 0.0) {
  Criterion c{id, title, true, "", nlohmann::json::array()};
  for (const auto& r : checks) {
    const bool in_time = max_seconds <= 0.0 || r.seconds < max_seconds;
    c.pass = c.pass && r.pass && in_time;
    if (!c.summary.empty()) c.summary += "; ";
    c.summary += r.name + " " + fmt("%.3g", r.measured) + " vs " + fmt("%.3g", r.tolerance);
    if (max_seconds > 0.0) c.summary += ", " + fmt("%.1f", r.seconds) + " s (limit " + fmt("%.0f", max_seconds) + " s)";
    c.detail.push_back(check_to_json(r));
    std::printf("    %s\n", check_line(r).c_str());
  }
  return c;
}

// --- criterion 9 -----------------------------------------------------------------

constexpr std::uint64_t kTrainDataSeed = 11;
constexpr std::uint64_t kHeldOutDataSeed = 12;
constexpr std::size_t kTrainMixtures = 2000;
constexpr std::size_t kHeldOutMixtures = 200;
constexpr double kRunLimitSeconds = 20.0 * 60.0;

struct ModelRun {
  EvalReport report;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
};

ModelRun train_and_evaluate(RunConfig config, const FeatureSet& train_set, const FeatureSet& held_out,
                            const Catalog& catalog) {
  ModelRun out;
  auto t0 = Clock::now();
  const TrainResult r = train(config, train_set, &catalog);
  out.train_seconds = since(t0);
  t0 = Clock::now();
  // Evaluate the checkpoint as written, the model a user would load.
  const Checkpoint ck = load_checkpoint(r.checkpoint_path);
  out.report = evaluate_sed(ck.model, held_out);
  out.report.config_hash = ck.config_hash;
  out.report.dataset = "held-out, seed " + std::to_string(kHeldOutDataSeed);
  out.eval_seconds = since(t0);
  std::ofstream(fs::path(config.out_dir) / "eval_report.json") << out.report.to_json().dump(2) << "\n";
  return out;
}

Criterion criterion9(const fs::path& work) {
  const Catalog catalog = default_catalog();
  auto t0 = Clock::now();
  const FeatureSet train_set = synthesize_feature_set(catalog, Partition::kTrain, kTrainMixtures, kTrainDataSeed);
  const FeatureSet held_out = synthesize_feature_set(catalog, Partition::kHeldOut, kHeldOutMixtures, kHeldOutDataSeed);
  const double data_seconds = since(t0);
  std::printf("    data: %zu train / %zu held-out mixtures in %.0f s\n", train_set.records.size(),
              held_out.records.size(), data_seconds);

  RunConfig frame_cfg;  // defaults are the pinned recipe: seed 1, 2000 steps, B 16, N 2
  frame_cfg.out_dir = (work / "c9_framewise").string();
  frame_cfg.train_manifest = "synthetic:train:" + std::to_string(kTrainDataSeed);
  RunConfig global_cfg = frame_cfg;
  global_cfg.out_dir = (work / "c9_global_only").string();
  global_cfg.weights.sed = 0.0;

  const ModelRun fw = train_and_evaluate(frame_cfg, train_set, held_out, catalog);
  std::printf("    frame-wise:  AUROC %.4f  rho %.4f  MPAUC %.4f  (train %.0f s, eval %.0f s)\n", fw.report.macro.auroc,
              fw.report.macro.rho, fw.report.macro.mpauc, fw.train_seconds, fw.eval_seconds);
  const ModelRun gl = train_and_evaluate(global_cfg, train_set, held_out, catalog);
  std::printf("    global-only: AUROC %.4f  rho %.4f  MPAUC %.4f  (train %.0f s, eval %.0f s)\n", gl.report.macro.auroc,
              gl.report.macro.rho, gl.report.macro.mpauc, gl.train_seconds, gl.eval_seconds);
  for (const auto& [name, m] : fw.report.per_event) {
    const auto it = gl.report.per_event.find(name);
    std::printf("      %-36s frame-wise %.3f  global-only %.3f\n", name.c_str(), m.auroc,
                it == gl.report.per_event.end() ? std::nan("") : it->second.auroc);
  }

  const double gap = fw.report.macro.auroc - gl.report.macro.auroc;
  const bool auroc_ok = fw.report.macro.auroc >= 0.80;
  const bool gap_ok = gap >= 0.10;
  const bool rho_ok = fw.report.macro.rho > gl.report.macro.rho;
  const bool time_ok = fw.train_seconds + fw.eval_seconds <= kRunLimitSeconds &&
                       gl.train_seconds + gl.eval_seconds <= kRunLimitSeconds;

  Criterion c{9, "desk-scale frame-wise vs global-only", auroc_ok && gap_ok && rho_ok && time_ok, "", {}};
  c.summary = "held-out AUROC " + fmt("%.4f", fw.report.macro.auroc) + " (>= 0.80), gap " + fmt("%.4f", gap) +
              " (>= 0.10), rho " + fmt("%.4f", fw.report.macro.rho) + " vs " + fmt("%.4f", gl.report.macro.rho) +
              ", runs " + fmt("%.0f", fw.train_seconds + fw.eval_seconds) + " s / " +
              fmt("%.0f", gl.train_seconds + gl.eval_seconds) + " s (<= 1200 s each)";
  c.detail = {{"framewise", fw.report.to_json()},
              {"global_only", gl.report.to_json()},
              {"gap", gap},
              {"data_seconds", data_seconds},
              {"framewise_seconds", fw.train_seconds + fw.eval_seconds},
              {"global_only_seconds", gl.train_seconds + gl.eval_seconds}};
  return c;
}

// --- criterion 10 ----------------------------------------------------------------

int run_cli(const fs::path& cwd, const std::string& args) {
  const std::string cmd =
      "cd '" + cwd.string() + "' && '" FLAMKIT_CLI_PATH "' " + args + " >> '" + (cwd / "cli.log").string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "cli.log") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    files[fs::relative(e.path(), root).string()] = s.str();
  }
  return files;
}

Criterion criterion10(const fs::path& work) {
  const fs::path dir = work / "c10";
  const char* config = R"({"train_manifest": "data/manifest.jsonl", "eval_manifest": "eval/manifest.jsonl",
  "out_dir": "run", "steps": 200, "checkpoint_interval": 100, "eval_interval": 100})";
  auto t0 = Clock::now();
  std::vector<std::map<std::string, std::string>> runs;
  bool commands_ok = true;
  for (int rep = 0; rep < 2; ++rep) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "config.json") << config;
    commands_ok = commands_ok && run_cli(dir, "synth --count 100 --seed 1 --out data") == 0 &&
                  run_cli(dir, "synth --count 20 --seed 2 --partition heldout --out eval") == 0 &&
                  run_cli(dir, "train --config config.json") == 0 &&
                  run_cli(dir, "eval --checkpoint run/checkpoint.flmk --out report.json") == 0;
    runs.push_back(snapshot(dir));
  }
  const double seconds = since(t0);

  std::size_t differing = 0;
  std::set<std::string> names;
  for (const auto& r : runs) {
    for (const auto& [k, v] : r) names.insert(k);
  }
  for (const auto& n : names) {
    const auto a = runs[0].find(n), b = runs[1].find(n);
    if (a == runs[0].end() || b == runs[1].end() || a->second != b->second) {
      ++differing;
      std::printf("    differs: %s\n", n.c_str());
    }
  }
  Criterion c{10, "end-to-end determinism", commands_ok && differing == 0 && !names.empty() && seconds < 300.0, "", {}};
  c.summary = std::to_string(names.size()) + " artifacts, " + std::to_string(differing) + " differ" +
              (commands_ok ? "" : ", a command failed (see c10/cli.log)") + ", " + fmt("%.0f", seconds) +
              " s for both runs (limit 300 s)";
  c.detail = {{"artifacts", names.size()}, {"differing", differing}, {"seconds", seconds}};
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flamkit acceptance run"};
  std::string workdir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "Scratch directory for datasets and runs");
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path work(workdir);
  fs::create_directories(work);
  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int id) { return selected.empty() || selected.contains(id); };

  const CheckOptions opts;
  const std::vector<std::pair<int, std::function<Criterion()>>> plan = {
      {1, [&] { return from_checks(1, "gradient correctness", {check_gradients(opts, 20)}, 30.0); }},
      {2, [&] { return from_checks(2, "ring equivalence", {check_ring_equivalence(opts, 10)}, 30.0); }},
      {3, [&] { return from_checks(3, "tabular optimum", {check_tabular_optimum(opts, 5)}); }},
      {4, [&] { return from_checks(4, "prior-head calibration", {check_prior_calibration(opts)}); }},
      {5, [&] {
         return from_checks(5, "classifier identities", {check_classifier_identity(), check_classifier_approximation()});
       }},
      {6, [&] { return from_checks(6, "SigLIP bias", {check_siglip_bias(opts)}); }},
      {7, [&] {
         return from_checks(7, "synthesis invariants",
                            {check_synthesis_invariants(10000, opts.seed), check_relabel_vectors()});
       }},
      {8, [&] { return from_checks(8, "metric oracles", {check_metric_oracles(opts, 100)}); }},
      {9, [&] { return criterion9(work); }},
      {10, [&] { return criterion10(work); }},
  };

  std::vector<Criterion> results;
  nlohmann::json report = nlohmann::json::array();
  for (const auto& [id, run] : plan) {
    if (!wanted(id)) continue;
    std::printf("C%d ...\n", id);
    std::fflush(stdout);
    const auto t0 = Clock::now();
    Criterion c;
    try {
      c = run();
    } catch (const std::exception& e) {
      c = {id, "criterion " + std::to_string(id), false, std::string("aborted: ") + e.what(), {}};
    }
    std::printf("[%s] C%d %s: %s (%.1f s)\n", c.pass ? "PASS" : "FAIL", c.id, c.title.c_str(), c.summary.c_str(),
                since(t0));
    std::fflush(stdout);
    report.push_back({{"criterion", c.id}, {"title", c.title}, {"pass", c.pass}, {"summary", c.summary},
                      {"detail", c.detail}});
    results.push_back(std::move(c));
  }

  std::size_t passed = 0;
  std::printf("\nSummary\n");
  for (const auto& c : results) {
    std::printf("  [%s] C%d %s\n", c.pass ? "PASS" : "FAIL", c.id, c.title.c_str());
    passed += c.pass;
  }
  std::printf("%zu of %zu criteria passed\n", passed, results.size());
  std::ofstream(work / "acceptance.json") << nlohmann::json{{"criteria", report}, {"code_version", kCodeVersion}}.dump(2)
                                          << "\n";
  return passed == results.size() ? 0 : 1;
}
