// SPDX-License-Identifier: Apache-2.0
//
// Command line front end. Exit codes: 0 success, 1 failed check or training
// abort, 2 invalid input (arguments, files, configs, mismatched artifacts).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "flamkit/checks.h"
#include "flamkit/dsp.h"
#include "flamkit/evaluation.h"
#include "flamkit/inference.h"
#include "flamkit/parallel.h"
#include "flamkit/synth.h"
#include "flamkit/train.h"

namespace fs = std::filesystem;
using namespace flamkit;

namespace {

constexpr int kExitCheckFailed = 1;
constexpr int kExitInvalidInput = 2;

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << j.dump(2) << "\n";
  if (!os) throw IoError("failed writing " + path);
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(path + " is not valid JSON: " + e.what());
  }
}

// --- catalog -------------------------------------------------------------------

struct CatalogArgs {
  std::string out = "catalog.json";
};

int run_catalog(const CatalogArgs& a) {
  write_json(a.out, catalog_to_json(default_catalog()));
  std::printf("wrote %s\n", a.out.c_str());
  return 0;
}

// --- synth ---------------------------------------------------------------------

struct SynthArgs {
  std::string catalog;
  std::size_t count = 100;
  std::uint64_t seed = 1;
  std::string out;
  std::string partition = "train";
};

int run_synth(const SynthArgs& a) {
  const Catalog catalog = a.catalog.empty() ? default_catalog() : load_catalog(a.catalog);
  validate_catalog(catalog);
  const Partition part = partition_from_string(a.partition);
  const DatasetSummary s = synthesize_dataset(catalog, a.count, a.seed, a.out, part, default_threads());
  // The catalog travels with the data so training can map captions to tags.
  write_json((fs::path(a.out) / "catalog.json").string(), catalog_to_json(catalog));
  std::printf("manifest %s\n", s.manifest_path.c_str());
  std::printf("mixtures %zu, events %zu (held-out %zu)\n", s.mixtures, s.events, s.held_out_events);
  std::printf("recipes: %zu train, %zu held-out; partition %s, seed %llu\n", s.train_recipes, s.held_out_recipes,
              a.partition.c_str(), static_cast<unsigned long long>(a.seed));
  return 0;
}

// --- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> devices;
  std::optional<std::size_t> steps;
  bool ablate_bias = false;
  bool ablate_scale = false;
  bool no_global = false;
};

RunConfig resolve_config(const TrainArgs& a) {
  RunConfig c = load_run_config(a.config);
  if (a.seed) c.seed = *a.seed;
  if (a.out) c.out_dir = *a.out;
  if (a.devices) c.devices = *a.devices;
  if (a.steps) c.steps = *a.steps;
  if (a.ablate_bias) c.per_text_bias = false;
  if (a.ablate_scale) c.per_text_scale = false;
  if (a.no_global) c.global_loss = false;
  validate_run_config(c);
  if (c.train_manifest.empty()) throw InvalidArgument("config has no train_manifest");
  return c;
}

std::optional<Catalog> training_catalog(const RunConfig& c) {
  if (!c.catalog.empty()) return load_catalog(c.catalog);
  const fs::path beside = fs::path(c.train_manifest).parent_path() / "catalog.json";
  if (fs::exists(beside)) return load_catalog(beside.string());
  return std::nullopt;
}

EvalReport evaluate_checkpoint(const std::string& checkpoint, const std::string& manifest) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  EvalReport rep = evaluate_sed(ck.model, read_manifest(manifest));
  rep.config_hash = ck.config_hash;
  return rep;
}

void print_report(const EvalReport& rep) {
  std::printf("events %zu (skipped %zu): AUROC %.4f  MPAUC %.4f  rho %.4f\n", rep.per_event.size(), rep.skipped.size(),
              rep.macro.auroc, rep.macro.mpauc, rep.macro.rho);
  std::printf("retrieval over %zu pairs: T2A R@1 %.3f R@5 %.3f  A2T R@1 %.3f R@5 %.3f\n", rep.retrieval_pairs,
              rep.recall_t2a_1, rep.recall_t2a_5, rep.recall_a2t_1, rep.recall_a2t_5);
}

int run_train(const TrainArgs& a) {
  const RunConfig c = resolve_config(a);
  const std::optional<Catalog> catalog = training_catalog(c);
  std::printf("config hash %s; loading %s\n", hash_hex(config_hash(c)).c_str(), c.train_manifest.c_str());
  const FeatureSet data = load_feature_set(read_manifest(c.train_manifest), c.resample_augment, default_threads());

  std::optional<FeatureSet> eval_data;
  std::ofstream eval_log;
  TrainOptions opts;
  opts.on_log = [](const StepLog& s) {
    std::printf("step %6llu  total %.5f  clip %.5f  sed %.6f  prior %.5f\n", static_cast<unsigned long long>(s.step),
                s.report.total, s.report.clip, s.report.sed, s.report.prior);
    std::fflush(stdout);
  };
  if (!c.eval_manifest.empty() && c.eval_interval > 0) {
    eval_data = load_feature_set(read_manifest(c.eval_manifest), false, default_threads());
    fs::create_directories(c.out_dir);
    eval_log.open(fs::path(c.out_dir) / "eval_log.jsonl", std::ios::trunc);
    const std::string hash = hash_hex(config_hash(c));
    opts.on_eval = [&eval_data, &eval_log, hash](const Model& m, std::uint64_t step) {
      EvalReport rep = evaluate_sed(m, *eval_data);
      nlohmann::json j{{"step", step}, {"macro", rep.to_json()["macro"]}, {"config_hash", hash}};
      eval_log << j.dump() << "\n";
    };
  }

  TrainResult r;
  try {
    r = train(c, data, catalog ? &*catalog : nullptr, opts);
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "training aborted: %s\n", e.what());
    return kExitCheckFailed;
  }
  std::printf("checkpoint %s\nloss log %s\n", r.checkpoint_path.c_str(), r.loss_log_path.c_str());

  if (!c.eval_manifest.empty()) {
    // Evaluate what was written, so the report matches a later `eval` run.
    EvalReport rep = evaluate_checkpoint(r.checkpoint_path, c.eval_manifest);
    rep.dataset = c.eval_manifest;
    const std::string path = (fs::path(c.out_dir) / "eval_report.json").string();
    write_json(path, rep.to_json());
    print_report(rep);
    std::printf("report %s\n", path.c_str());
  }
  return 0;
}

// --- eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string config;
  std::string out;
};

int run_eval(const EvalArgs& a) {
  const fs::path run_dir = fs::path(a.checkpoint).parent_path();
  const std::string config_path = a.config.empty() ? (run_dir / "config.json").string() : a.config;
  if (!fs::exists(config_path)) {
    throw InvalidArgument("no run config at " + config_path + "; pass --config to check the checkpoint against");
  }
  const RunConfig c = run_config_from_json(read_json(config_path));
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  if (ck.config_hash != config_hash(c)) {
    throw InvalidArgument("checkpoint " + a.checkpoint + " was written by config " + hash_hex(ck.config_hash) +
                          ", but " + config_path + " hashes to " + hash_hex(config_hash(c)));
  }
  const std::string manifest = a.manifest.empty() ? c.eval_manifest : a.manifest;
  if (manifest.empty()) throw InvalidArgument("no manifest given and the config has no eval_manifest");

  EvalReport rep = evaluate_sed(ck.model, read_manifest(manifest));
  rep.config_hash = ck.config_hash;
  rep.dataset = manifest;
  const std::string out = a.out.empty() ? (run_dir / "eval_report.json").string() : a.out;
  write_json(out, rep.to_json());
  print_report(rep);
  std::printf("report %s\n", out.c_str());
  return 0;
}

// --- infer ---------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint;
  std::string wav;
  std::string prompt;
  double threshold = 0.5;
  std::size_t median_width = 3;
  std::string out = "timeline.json";
};

int run_infer(const InferArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const WavData wav = read_wav(a.wav);
  if (wav.sample_rate != kSampleRate) {
    throw InvalidArgument(a.wav + " is sampled at " + std::to_string(wav.sample_rate) +
                          " Hz; resample it to 48000 Hz mono first");
  }
  if (wav.samples.size() != kClipSamples) {
    throw InvalidArgument(a.wav + " holds " + std::to_string(wav.samples.size()) +
                          " samples; pad or trim it to exactly 10 s (480000 samples)");
  }
  const AudioForward audio = ck.model.encode_audio(wav.samples);
  const TextForward text = ck.model.encode_text(a.prompt);
  const auto scores = median_filter(frame_scores(audio.frames, text.embedding, text.alpha), a.median_width);
  const auto segments = extract_timeline(scores, a.threshold);

  nlohmann::json j = timeline_to_json(a.wav, a.prompt, segments, scores);
  j["threshold"] = a.threshold;
  j["config_hash"] = hash_hex(ck.config_hash);
  j["code_version"] = kCodeVersion;
  write_json(a.out, j);

  std::printf("%s: \"%s\"\n", a.wav.c_str(), a.prompt.c_str());
  if (segments.empty()) std::printf("  no detections above %.2f\n", a.threshold);
  for (const auto& s : segments) std::printf("  %6.3f - %6.3f s  score %.3f\n", s.onset, s.offset, s.score);
  std::printf("timeline %s\n", a.out.c_str());
  return 0;
}

// --- verify --------------------------------------------------------------------

struct VerifyArgs {
  std::uint64_t seed = 7;
  bool perturb = false;
  std::string json;
};

int run_verify(const VerifyArgs& a) {
  CheckOptions opts;
  opts.seed = a.seed;
  if (a.perturb) opts.gradient_perturbation = 1e-3;
  const auto results = run_verify_suite(opts);
  bool ok = true;
  nlohmann::json report = nlohmann::json::array();
  for (const auto& r : results) {
    std::printf("%s\n", check_line(r).c_str());
    ok = ok && r.pass;
    report.push_back(check_to_json(r));
  }
  if (!a.json.empty()) write_json(a.json, {{"checks", report}, {"pass", ok}, {"code_version", kCodeVersion}});
  std::printf("%s\n", ok ? "all checks passed" : "some checks FAILED");
  return ok ? 0 : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flamkit: frame-wise language-audio modeling toolkit"};
  app.require_subcommand(1);

  CatalogArgs ca;
  auto* cat = app.add_subcommand("catalog", "Write the built-in event catalog as JSON");
  cat->add_option("--out", ca.out, "Output path");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Synthesize a labeled mixture dataset");
  synth->add_option("--catalog", sa.catalog, "Catalog JSON (default: built-in catalog)");
  synth->add_option("--count", sa.count, "Number of mixtures");
  synth->add_option("--seed", sa.seed, "Dataset seed");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--partition", sa.partition, "train, heldout or all")
      ->check(CLI::IsMember({"train", "heldout", "all"}));

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model from a run config");
  tr->add_option("--config", ta.config, "Run config JSON")->required();
  tr->add_option("--seed", ta.seed, "Override the config seed");
  tr->add_option("--out", ta.out, "Override the output directory");
  tr->add_option("--devices", ta.devices, "Override the simulated ring size");
  tr->add_option("--steps", ta.steps, "Override the step budget");
  tr->add_flag("--ablate-per-text-bias", ta.ablate_bias, "Shared scalar bias instead of the per-text head");
  tr->add_flag("--ablate-per-text-scale", ta.ablate_scale, "Shared scalar scale instead of the per-text head");
  tr->add_flag("--no-global-loss", ta.no_global, "Drop the clip-level contrastive loss");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  ev->add_option("--manifest", ea.manifest, "Manifest (default: the config's eval_manifest)");
  ev->add_option("--config", ea.config, "Run config (default: config.json beside the checkpoint)");
  ev->add_option("--out", ea.out, "Report path (default: eval_report.json beside the checkpoint)");

  InferArgs ia;
  auto* inf = app.add_subcommand("infer", "Detect a prompt in a 10 s, 48 kHz WAV file");
  inf->add_option("--checkpoint", ia.checkpoint, "Checkpoint file")->required();
  inf->add_option("--wav", ia.wav, "Input WAV")->required();
  inf->add_option("--prompt", ia.prompt, "Text prompt")->required();
  inf->add_option("--threshold", ia.threshold, "Decision threshold in (0, 1)");
  inf->add_option("--median-width", ia.median_width, "Median filter width (odd)");
  inf->add_option("--out", ia.out, "Timeline JSON path");

  VerifyArgs va;
  auto* ver = app.add_subcommand("verify", "Run the property and oracle checks");
  ver->add_option("--seed", va.seed, "Seed for the random instances");
  ver->add_flag("--perturb-gradient", va.perturb, "Negative control: perturb analytic gradients by 0.1%");
  ver->add_option("--json", va.json, "Also write the report as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalidInput;
  }

  try {
    if (*cat) return run_catalog(ca);
    if (*synth) return run_synth(sa);
    if (*tr) return run_train(ta);
    if (*ev) return run_eval(ea);
    if (*inf) return run_infer(ia);
    if (*ver) return run_verify(va);
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalidInput;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalidInput;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitCheckFailed;
  }
  return 0;
}
