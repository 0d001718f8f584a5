// SPDX-License-Identifier: Apache-2.0

#ifndef FLAMKIT_EVALUATION_H_
#define FLAMKIT_EVALUATION_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flamkit/encoders.h"
#include "flamkit/train.h"
#include "json.hpp"

namespace flamkit {

struct EventMetrics {
  double auroc = 0.0;
  double mpauc = 0.0;
  double rho = 0.0;
  std::size_t clips = 0;
  std::size_t frames = 0;
};

struct EvalOptions {
  std::size_t median_width = 3;
  unsigned threads = 0;
};

struct EvalReport {
  std::string dataset;
  std::map<std::string, EventMetrics> per_event;  // keyed by normalized caption
  std::vector<std::string> skipped;  // events whose pooled labels are single-class
  EventMetrics macro;
  double recall_t2a_1 = 0.0, recall_t2a_5 = 0.0, recall_a2t_1 = 0.0, recall_a2t_5 = 0.0;
  std::size_t retrieval_pairs = 0;
  std::uint64_t config_hash = 0;

  nlohmann::json to_json() const;
};

// Per clip, only the clip's own event prompts are scored. Scores are
// median-filtered per (clip, prompt), then pooled per prompt over the corpus.
// AUROC and rho use the model frame grid; MPAUC uses 1 s segments (labels
// max-pooled from the 50 Hz curve, scores overlap-weighted means).
EvalReport evaluate_sed(const Model& model, const FeatureSet& data, const EvalOptions& options = {});

// Same, reading audio through the manifest. Missing files raise IoError.
EvalReport evaluate_sed(const Model& model, const Manifest& manifest, const EvalOptions& options = {});

// 1 s segment views of a clip's frame scores and 50 Hz activity.
std::vector<double> segment_scores(std::span<const double> frame_scores, double segment_seconds = 1.0);
std::vector<std::uint8_t> segment_labels(const ActivityCurve& curve, double segment_seconds = 1.0);

}  // namespace flamkit

#endif  // FLAMKIT_EVALUATION_H_
