// SPDX-License-Identifier: Apache-2.0

#include "flamkit/inference.h"

#include <algorithm>
#include <cmath>

namespace flamkit {

double exact_classifier(double p_post, double p_prior) {
  if (!(p_post > 0.0 && p_post < 1.0) || !(p_prior > 0.0 && p_prior < 1.0)) {
    throw InvalidArgument("exact_classifier: probabilities must lie in (0, 1)");
  }
  return p_post / (p_post + p_prior);
}

double exact_score_from_logit(double beta_star, double r) {
  const double log_ratio = log_sigmoid(beta_star) - log_sigmoid(r + beta_star);
  return sigmoid(-log_ratio);
}

double approx_classifier_error(double beta_star, double r) {
  return std::abs(exact_score_from_logit(beta_star, r) - sigmoid(r));
}

std::vector<double> frame_scores(const Matrix& frames, std::span<const double> prompt, double alpha) {
  if (frames.cols() != prompt.size()) throw InvalidArgument("frame_scores: dimension mismatch");
  if (!(alpha > 0.0)) throw InvalidArgument("frame_scores: alpha must be positive");
  std::vector<double> s(frames.rows());
  for (std::size_t l = 0; l < frames.rows(); ++l) s[l] = sigmoid(alpha * dot(frames.row(l), prompt));
  return s;
}

std::vector<double> median_filter(std::span<const double> scores, std::size_t width) {
  if (width == 0 || width % 2 == 0) throw InvalidArgument("median_filter: width must be odd");
  const auto n = static_cast<std::ptrdiff_t>(scores.size());
  const auto half = static_cast<std::ptrdiff_t>(width / 2);
  std::vector<double> out(scores.size());
  std::vector<double> window(width);
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    for (std::ptrdiff_t j = -half; j <= half; ++j) {
      const std::ptrdiff_t idx = std::clamp<std::ptrdiff_t>(i + j, 0, n - 1);
      window[static_cast<std::size_t>(j + half)] = scores[static_cast<std::size_t>(idx)];
    }
    std::nth_element(window.begin(), window.begin() + half, window.end());
    out[static_cast<std::size_t>(i)] = window[static_cast<std::size_t>(half)];
  }
  return out;
}

std::vector<DetectionSegment> extract_timeline(std::span<const double> scores, double threshold,
                                               double frame_seconds) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("threshold must lie in (0, 1)");
  std::vector<DetectionSegment> out;
  std::size_t l = 0;
  while (l < scores.size()) {
    if (!(scores[l] > threshold)) {
      ++l;
      continue;
    }
    const std::size_t start = l;
    double sum = 0.0;
    while (l < scores.size() && scores[l] > threshold) sum += scores[l++];
    out.push_back({static_cast<double>(start) * frame_seconds, static_cast<double>(l) * frame_seconds,
                   sum / static_cast<double>(l - start)});
  }
  return out;
}

nlohmann::json timeline_to_json(const std::string& audio, const std::string& prompt,
                                const std::vector<DetectionSegment>& segments, std::span<const double> scores) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : segments) segs.push_back({{"onset", s.onset}, {"offset", s.offset}, {"score", s.score}});
  return {{"audio", audio},
          {"prompt", prompt},
          {"segments", segs},
          {"frame_scores", std::vector<double>(scores.begin(), scores.end())}};
}

}  // namespace flamkit
