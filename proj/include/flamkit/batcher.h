// SPDX-License-Identifier: Apache-2.0

#ifndef FLAMKIT_BATCHER_H_
#define FLAMKIT_BATCHER_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flamkit/features.h"
#include "flamkit/synth.h"

namespace flamkit {

inline constexpr std::size_t kMaxPromptsPerClip = 5;

// Lowercase and collapse whitespace runs to one space; trims both ends.
std::string normalize_caption(const std::string& caption);

struct BatchEvent {
  std::string caption;
  ActivityCurve activity;  // 50 Hz
};

struct BatchClip {
  std::size_t record = 0;  // index into the manifest, or a placeholder
  std::vector<BatchEvent> events;
  std::string global_caption;  // text paired with the clip for the global loss
};

struct SedBatch {
  std::vector<BatchClip> clips;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
};

struct PromptUnion {
  std::vector<std::string> prompts;           // normalized, distinct
  std::vector<std::vector<std::size_t>> slot;  // slot[i][k_local] -> union index
};

PromptUnion union_prompts(const SedBatch& batch);

// z in {-1,+1}^{B x K x L}, plus masks. Padded clips and padded prompt slots
// are marked invalid and excluded from every loss.
struct LabelTensor {
  std::size_t B = 0, K = 0, L = 0;
  std::vector<std::int8_t> z;
  std::vector<std::uint8_t> clip_valid;    // B
  std::vector<std::uint8_t> prompt_valid;  // K
  std::vector<std::uint8_t> present;       // B x K: prompt listed by the clip

  std::int8_t at(std::size_t i, std::size_t k, std::size_t l) const { return z[(i * K + k) * L + l]; }
  std::int8_t& at(std::size_t i, std::size_t k, std::size_t l) { return z[(i * K + k) * L + l]; }
  bool valid(std::size_t i, std::size_t k) const { return clip_valid[i] && prompt_valid[k]; }
};

LabelTensor make_label_tensor(std::size_t B, std::size_t K, std::size_t L);
LabelTensor build_label_tensor(const SedBatch& batch, const PromptUnion& prompts, std::size_t L = kModelFrames);

// Model frame l is +1 iff any 50 Hz frame in [floor(l*500/L), floor((l+1)*500/L))
// is active. Throws InvalidArgument unless the curve has 500 frames.
std::vector<std::int8_t> downsample_activity(const ActivityCurve& curve, std::size_t L = kModelFrames);

struct SamplerOptions {
  std::size_t max_prompts = kMaxPromptsPerClip;
  // Probability of replacing a caption by its bare class tag.
  double tag_prob = 0.0;
  // normalized caption -> tag; captions without an entry are never swapped.
  std::map<std::string, std::string> tags;
};

std::map<std::string, std::string> caption_tag_map(const Catalog& catalog);

// Epoch-permuted batches without replacement. Pure in (records, B, seed, step).
class BatchSampler {
 public:
  BatchSampler(const std::vector<MixtureRecord>& records, std::size_t batch_size, std::uint64_t seed,
               SamplerOptions options = {});

  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  SedBatch batch(std::uint64_t step) const;

 private:
  const std::vector<MixtureRecord>* records_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  SamplerOptions options_;
  std::size_t steps_per_epoch_;
};

// One-shot convenience over BatchSampler.
SedBatch sample_batch(const std::vector<MixtureRecord>& records, std::size_t batch_size, std::uint64_t seed,
                      std::uint64_t step, const SamplerOptions& options = {});

}  // namespace flamkit

#endif  // FLAMKIT_BATCHER_H_
