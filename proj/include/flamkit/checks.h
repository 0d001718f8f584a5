// SPDX-License-Identifier: Apache-2.0

#ifndef FLAMKIT_CHECKS_H_
#define FLAMKIT_CHECKS_H_

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace flamkit {

// Outcome of one property check. `measured` is compared against `tolerance`
// in the direction the check documents (usually measured <= tolerance).
struct CheckResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
  double seconds = 0.0;
};

nlohmann::json check_to_json(const CheckResult& r);
std::string check_line(const CheckResult& r);

struct CheckOptions {
  std::uint64_t seed = 7;
  // Negative control: analytic gradients are scaled by (1 + this) before the
  // comparison, which must then fail.
  double gradient_perturbation = 0.0;
};

// Analytic vs central finite differences for the CLIP, SigLIP, frame and
// prior losses. Each loss runs `instances` random instances on a small model;
// every parameter group is compared, with the stop-gradient routes held fixed
// in the numerical side. Relative error floor 1e-6.
CheckResult check_gradients(const CheckOptions& opts, std::size_t instances = 20);

// ring_sed_loss vs sed_loss for N in {1,2,4,8}, `batches` random batches
// each: relative 1e-6 in value and every gradient, bitwise at N=1.
CheckResult check_ring_equivalence(const CheckOptions& opts, std::size_t batches = 10);

// Gradient descent on the tabular expected loss recovers the closed-form
// logit table within 1e-2 on `worlds` random 8 x 3 worlds.
CheckResult check_tabular_optimum(const CheckOptions& opts, std::size_t worlds = 5);

// Trains the bias head alone on a fixed stream of per-prompt label means over
// every catalog caption; sigma(beta) must match each prompt's empirical rate
// within 1e-2.
CheckResult check_prior_calibration(const CheckOptions& opts);

// sign(s - 0.5) == sign(p_post - p_prior) over the 99 x 99 probability grid.
CheckResult check_classifier_identity();

// max |exact score - sigma(r)| for beta* = -8, r in [-10, 10] step 0.01,
// must stay within 1e-3.
CheckResult check_classifier_approximation();

// Scalar SigLIP bias fitted at B = 64 lands within 0.1 of -log 63.
CheckResult check_siglip_bias(const CheckOptions& opts);

// Fixed label-smoothing and RMS-relabel vectors, exact match required.
CheckResult check_relabel_vectors();

// AUROC and recall equal their counting oracles exactly; MPAUC and Spearman
// within 1e-9 of their dense oracles; `instances` random instances each.
CheckResult check_metric_oracles(const CheckOptions& opts, std::size_t instances = 100);

// Synthesizes `count` mixtures of the default catalog: concurrency <= 3 on
// placements and final labels, gains in [6, 30] dB, split and repeat rates
// 0.10 +- 0.02.
CheckResult check_synthesis_invariants(std::size_t count, std::uint64_t seed, unsigned threads = 0);

// The property suite behind `flamkit verify`.
std::vector<CheckResult> run_verify_suite(const CheckOptions& opts);

}  // namespace flamkit

#endif  // FLAMKIT_CHECKS_H_
