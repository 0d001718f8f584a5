// SPDX-License-Identifier: Apache-2.0

#ifndef FLAMKIT_OBJECTIVES_H_
#define FLAMKIT_OBJECTIVES_H_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "flamkit/batcher.h"
#include "flamkit/numcore.h"
#include "flamkit/rng.h"
#include "json.hpp"

namespace flamkit {

// Symmetric InfoNCE over B matched (audio, text) pairs; alpha = exp(log_scale).
struct ClipLossResult {
  double loss = 0.0;
  Matrix d_audio, d_text;
  double d_log_scale = 0.0;
};
ClipLossResult clip_loss(const Matrix& audio, const Matrix& text, double log_scale);

// Pairwise sigmoid loss: -(1/B) sum_ij log sigma(z_ij (alpha a_i.t_j + beta)).
struct SiglipLossResult {
  double loss = 0.0;
  Matrix d_audio, d_text;
  double d_log_scale = 0.0;
  double d_bias = 0.0;
};
SiglipLossResult siglip_loss(const Matrix& audio, const Matrix& text, double log_scale, double bias);

// Frame-level loss. `frames` holds B*L unit rows (clip-major), `prompts` K
// unit rows; the per-prompt logit is h = exp(log_alpha_k) f.e_k + beta_k.
struct SedGrads {
  Matrix d_frames;   // B*L x d
  Matrix d_prompts;  // K x d
  std::vector<double> d_log_alpha;
  // Gradient with respect to beta. Callers that honour the stop-gradient
  // (per-text bias head) discard it.
  std::vector<double> d_beta;
};

struct SedLossResult {
  double loss = 0.0;
  std::uint64_t count = 0;  // valid (i,k,l) triples
  SedGrads grads;
};

SedLossResult sed_loss(const Matrix& frames, const Matrix& prompts, std::span<const double> log_alpha,
                       std::span<const double> beta, const LabelTensor& z);

// Views used by the shared kernel: a contiguous range of clips and a block
// of prompt slots whose global prompt indices are `prompt_index` (-1 for
// padding).
struct ClipRange {
  const Matrix* frames = nullptr;  // rows for these clips only
  std::size_t first_clip = 0;      // global index of row block 0
  std::size_t clips = 0;
  Matrix* d_frames = nullptr;
};

struct PromptBlock {
  const Matrix* embeddings = nullptr;
  std::span<const double> log_alpha;
  std::span<const double> beta;
  std::span<const std::int64_t> prompt_index;
  Matrix* d_embeddings = nullptr;
  std::span<double> d_log_alpha;
  std::span<double> d_beta;
};

// Scores every valid (clip, slot, frame) triple of the range against the
// block. Appends one loss term per triple to `terms` (clip, slot, frame
// order) and accumulates unnormalized gradients. `visit`, when set, is
// called for every scored (clip, prompt) pair.
void sed_kernel(const ClipRange& clips, const PromptBlock& block, const LabelTensor& z,
                std::vector<double>& terms, const std::function<void(std::size_t, std::size_t)>& visit = {});

// Mean label per prompt over valid clips and frames; 0 for invalid prompts.
std::vector<double> zbar(const LabelTensor& z);

struct PriorLossResult {
  double loss = 0.0;
  std::vector<double> d_beta;
};
// Mean over valid prompts of BCE(sigma(beta_k), zbar_k).
PriorLossResult prior_loss(std::span<const double> beta, std::span<const double> zbar,
                           std::span<const std::uint8_t> valid = {});

struct LossWeights {
  double clip = 1.0;
  double sed = 200.0;
  double prior = 1.0;
};
void validate_weights(const LossWeights& w);

struct LossReport {
  double clip = 0.0;
  double sed = 0.0;
  double prior = 0.0;
  double total = 0.0;
  std::map<std::string, double> grad_norms;

  nlohmann::json to_json() const;
};

// total = w.clip*clip + w.sed*sed + w.prior*prior. Throws on negative weights.
LossReport combine_losses(const LossWeights& w, double clip, double sed, double prior);

// Finite world for the optimum of the expected frame loss. Positive pairs
// (f, y) are drawn from a joint P(f, y); negatives for prompt y use the frame
// marginal P(f). Full joint: p(z=1,f,y) = w_y P(f|y), p(z=-1,f,y) = u_y P(f).
struct TabularWorld {
  std::size_t frames = 0, prompts = 0;
  std::vector<double> p_pos;  // frames x prompts, p(z=1, f, y)
  std::vector<double> p_neg;  // frames x prompts, p(z=-1, f, y)
  std::vector<double> pair_joint;  // P(f, y) of positive pairs

  double pos(std::size_t f, std::size_t y) const { return p_pos[f * prompts + y]; }
  double neg(std::size_t f, std::size_t y) const { return p_neg[f * prompts + y]; }
};

// Random world; `independent` makes P(f, y) = P(f) P(y).
TabularWorld make_tabular_world(Rng& rng, std::size_t frames = 8, std::size_t prompts = 3,
                                bool independent = false);
// Uniform world with p(z=1 | f, y) = 0.5 everywhere.
TabularWorld uniform_tabular_world(std::size_t frames, std::size_t prompts);

// log(P(y|f)/P(y)) + beta*(y), beta*(y) = log p(z=1|y)/p(z=-1|y).
Matrix tabular_closed_form(const TabularWorld& world);
// Expected frame loss of a logit table under the world.
double tabular_expected_loss(const TabularWorld& world, const Matrix& h);

struct TabularFit {
  Matrix h;
  Matrix closed_form;
  double max_abs_error = 0.0;
  double grad_max = 0.0;
  std::size_t steps = 0;
  bool converged = false;
};

// Gradient descent from h = 0 on the exact expected loss. lr <= 0 picks a
// stable step from the largest entry mass. Stops when every gradient entry is
// below tol.
TabularFit tabular_sed_optimum(const TabularWorld& world, std::size_t steps, double lr = 0.0,
                               double tol = 1e-12);

// Scalar bias experiment: B unit embeddings with no pairing
// information, alpha fixed, only the scalar bias fitted by Newton steps on the
// pooled sigmoid loss over `batches` batches.
struct SiglipBiasFit {
  double beta = 0.0;
  double target = 0.0;  // -log(B-1)
  std::size_t batches = 0;
};
SiglipBiasFit fit_siglip_bias(std::size_t batch_size, std::size_t dim, std::size_t batches, std::uint64_t seed,
                              double log_scale = 0.0);

}  // namespace flamkit

#endif  // FLAMKIT_OBJECTIVES_H_
