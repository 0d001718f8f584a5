// SPDX-License-Identifier: Apache-2.0

#ifndef FLAMKIT_TRAIN_H_
#define FLAMKIT_TRAIN_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flamkit/batcher.h"
#include "flamkit/encoders.h"
#include "flamkit/objectives.h"
#include "flamkit/synth.h"
#include "json.hpp"

namespace flamkit {

inline constexpr const char* kCodeVersion = "flamkit 0.1.0";

struct RunConfig {
  std::uint64_t seed = 1;
  std::string train_manifest;
  std::string eval_manifest;
  std::string catalog;  // optional; enables caption/tag augmentation
  std::string out_dir = "run";
  std::size_t batch_size = 16;
  std::size_t devices = 2;
  LossWeights weights;
  double lr = 3e-3;
  std::size_t steps = 2000;
  std::size_t log_interval = 10;
  std::size_t eval_interval = 0;  // 0: evaluate only at the end
  std::size_t checkpoint_interval = 500;
  bool per_text_bias = true;
  bool per_text_scale = true;
  bool global_loss = true;
  double tag_prob = 0.5;
  bool resample_augment = false;
  bool ring_threaded = false;
  ModelConfig model;

  // Model configuration with the ablation flags applied.
  ModelConfig effective_model() const;
};

nlohmann::json run_config_to_json(const RunConfig& c);
// Missing keys keep their defaults; throws InvalidArgument on bad values.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
void validate_run_config(const RunConfig& c);
// FNV-1a 64 over the canonical JSON dump, out_dir excluded.
std::uint64_t config_hash(const RunConfig& c);
std::string hash_hex(std::uint64_t h);

// Records with their front-end features. `variants` holds band-limited
// versions used by the resampling augmentation (empty when disabled).
struct FeatureSet {
  std::vector<MixtureRecord> records;
  std::vector<Matrix> features;
  std::vector<std::vector<Matrix>> variants;
};

FeatureSet load_feature_set(const Manifest& manifest, bool with_variants = false, unsigned threads = 0);
FeatureSet synthesize_feature_set(const Catalog& catalog, Partition partition, std::size_t count, std::uint64_t seed,
                                  bool with_variants = false, unsigned threads = 0);

// Thrown when a loss or gradient becomes non-finite. what() names the step
// and the record ids of the batch.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Loss and full parameter gradient for one batch. The bias head receives
// only the prior gradient (per-text bias) and the global embeddings only the
// CLIP gradient.
struct StepResult {
  LossReport report;
  std::vector<double> grad;
  std::uint64_t sed_count = 0;
};

StepResult compute_step(const Model& model, const SedBatch& batch, const std::vector<const Matrix*>& features,
                        const RunConfig& config);

struct StepLog {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  LossReport report;
};

struct TrainOptions {
  // Writes checkpoints and the loss log under out_dir when true.
  bool write_artifacts = true;
  std::function<void(const StepLog&)> on_log;
  // Test hook: called with each batch's gradient before the update.
  std::function<void(std::vector<double>&)> gradient_hook;
  // Called every eval_interval steps (when non-zero) and after the last step.
  std::function<void(const Model&, std::uint64_t step)> on_eval;
};

struct TrainResult {
  Model model;
  std::uint64_t config_hash = 0;
  std::vector<StepLog> log;
  std::string checkpoint_path;
  std::string loss_log_path;
};

// The caption->tag map comes from `catalog` when given.
TrainResult train(const RunConfig& config, const FeatureSet& data, const Catalog* catalog = nullptr,
                  const TrainOptions& options = {});

// Per-band mean and standard deviation over every frame of the set.
void feature_statistics(const FeatureSet& data, std::vector<double>& mean, std::vector<double>& stddev);

}  // namespace flamkit

#endif  // FLAMKIT_TRAIN_H_
