// SPDX-License-Identifier: Apache-2.0

#ifndef FLAMKIT_METRICS_H_
#define FLAMKIT_METRICS_H_

#include <cstdint>
#include <span>
#include <vector>

#include "flamkit/numcore.h"

namespace flamkit {

// Raised when a metric is undefined for its input (single class, constant
// vector).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

// Mann-Whitney statistic P(pos > neg) + 0.5 P(tie) via average-rank sums.
double frame_auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};
// Points from (0,0) to (1,1), one per distinct score threshold.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Partial AUC over FPR in [0, max_fpr], McClish-standardized:
// 0.5 * (1 + (A - A_min) / (A_max - A_min)), A_min = max_fpr^2 / 2,
// A_max = max_fpr. Chance scores 0.5, a perfect ranking 1.
double mpauc(std::span<const double> scores, std::span<const std::uint8_t> labels, double max_fpr = 0.1);

// Pearson correlation of average ranks.
double spearman_rho(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct Recall {
  double text_to_audio = 0.0;  // per column of sim
  double audio_to_text = 0.0;  // per row of sim
};
// sim(i, j) = similarity of audio i and text j; the diagonal holds matches.
// Ties are broken by index: the lower index ranks first.
Recall recall_at_k(const Matrix& sim, std::size_t k);

// Brute-force references, deliberately written without sorting.
namespace oracle {
double auroc_pairwise(std::span<const double> scores, std::span<const std::uint8_t> labels);
double mpauc_threshold_sweep(std::span<const double> scores, std::span<const std::uint8_t> labels,
                             double max_fpr = 0.1);
double spearman_direct(std::span<const double> scores, std::span<const std::uint8_t> labels);
Recall recall_exhaustive(const Matrix& sim, std::size_t k);
}  // namespace oracle

}  // namespace flamkit

#endif  // FLAMKIT_METRICS_H_
