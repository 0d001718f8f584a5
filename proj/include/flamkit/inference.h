// SPDX-License-Identifier: Apache-2.0

#ifndef FLAMKIT_INFERENCE_H_
#define FLAMKIT_INFERENCE_H_

#include <span>
#include <string>
#include <vector>

#include "flamkit/features.h"
#include "flamkit/numcore.h"
#include "json.hpp"

namespace flamkit {

// s = p_post / (p_post + p_prior); both must lie in (0, 1).
double exact_classifier(double p_post, double p_prior);

// Exact score 1 / (1 + sigma(beta*) / sigma(r + beta*)) evaluated in log space.
double exact_score_from_logit(double beta_star, double r);
// |exact_score_from_logit(beta*, r) - sigma(r)|
double approx_classifier_error(double beta_star, double r);

// s_l = sigma(alpha * frame_l . prompt); the prompt bias is not used.
std::vector<double> frame_scores(const Matrix& frames, std::span<const double> prompt, double alpha);

// Centered running median with replicate padding. Width must be odd.
std::vector<double> median_filter(std::span<const double> scores, std::size_t width = 3);

struct DetectionSegment {
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds, exclusive
  double score = 0.0;   // mean frame score over the segment
};

// Maximal runs with s > threshold. Threshold must lie in (0, 1).
std::vector<DetectionSegment> extract_timeline(std::span<const double> scores, double threshold = 0.5,
                                               double frame_seconds = kModelFrameSeconds);

nlohmann::json timeline_to_json(const std::string& audio, const std::string& prompt,
                                const std::vector<DetectionSegment>& segments, std::span<const double> scores);

}  // namespace flamkit

#endif  // FLAMKIT_INFERENCE_H_
