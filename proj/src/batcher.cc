// SPDX-License-Identifier: Apache-2.0

#include "flamkit/batcher.h"

#include <algorithm>
#include <cctype>
#include <numeric>

#include "flamkit/rng.h"

namespace flamkit {

std::string normalize_caption(const std::string& caption) {
  std::string out;
  bool pending_space = false;
  for (unsigned char ch : caption) {
    if (std::isspace(ch)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(ch)));
  }
  return out;
}

PromptUnion union_prompts(const SedBatch& batch) {
  PromptUnion u;
  std::map<std::string, std::size_t> index;
  u.slot.resize(batch.clips.size());
  for (std::size_t i = 0; i < batch.clips.size(); ++i) {
    for (const BatchEvent& ev : batch.clips[i].events) {
      const std::string key = normalize_caption(ev.caption);
      if (key.empty()) throw InvalidArgument("batch contains an empty caption");
      auto [it, inserted] = index.emplace(key, u.prompts.size());
      if (inserted) u.prompts.push_back(key);
      u.slot[i].push_back(it->second);
    }
  }
  return u;
}

LabelTensor make_label_tensor(std::size_t B, std::size_t K, std::size_t L) {
  LabelTensor t;
  t.B = B;
  t.K = K;
  t.L = L;
  t.z.assign(B * K * L, -1);
  t.clip_valid.assign(B, 1);
  t.prompt_valid.assign(K, 1);
  t.present.assign(B * K, 0);
  return t;
}

std::vector<std::int8_t> downsample_activity(const ActivityCurve& curve, std::size_t L) {
  if (curve.size() != kLabelFrames) {
    throw InvalidArgument("activity curve must have " + std::to_string(kLabelFrames) + " frames, got " +
                          std::to_string(curve.size()));
  }
  if (L == 0) throw InvalidArgument("downsample_activity: L must be positive");
  std::vector<std::int8_t> out(L, -1);
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t lo = l * kLabelFrames / L;
    const std::size_t hi = (l + 1) * kLabelFrames / L;
    for (std::size_t f = lo; f < hi; ++f) {
      if (curve[f]) {
        out[l] = 1;
        break;
      }
    }
  }
  return out;
}

LabelTensor build_label_tensor(const SedBatch& batch, const PromptUnion& prompts, std::size_t L) {
  const std::size_t B = batch.clips.size();
  LabelTensor t = make_label_tensor(B, prompts.prompts.size(), L);
  if (prompts.slot.size() != B) throw InvalidArgument("prompt union was built from a different batch");
  for (std::size_t i = 0; i < B; ++i) {
    const auto& events = batch.clips[i].events;
    if (prompts.slot[i].size() != events.size()) throw InvalidArgument("prompt union was built from a different batch");
    for (std::size_t e = 0; e < events.size(); ++e) {
      const std::size_t k = prompts.slot[i][e];
      t.present[i * t.K + k] = 1;
      const auto frames = downsample_activity(events[e].activity, L);
      for (std::size_t l = 0; l < L; ++l) {
        if (frames[l] > 0) t.at(i, k, l) = 1;
      }
    }
  }
  return t;
}

std::map<std::string, std::string> caption_tag_map(const Catalog& catalog) {
  std::map<std::string, std::string> tags;
  for (const EventRecipe& r : catalog.events) {
    for (const std::string& c : r.captions) tags[normalize_caption(c)] = r.tag();
  }
  return tags;
}

BatchSampler::BatchSampler(const std::vector<MixtureRecord>& records, std::size_t batch_size, std::uint64_t seed,
                           SamplerOptions options)
    : records_(&records), batch_size_(batch_size), seed_(seed), options_(std::move(options)) {
  if (batch_size == 0) throw InvalidArgument("batch size must be at least 1");
  if (batch_size > records.size()) {
    throw InvalidArgument("batch size " + std::to_string(batch_size) + " exceeds manifest size " +
                          std::to_string(records.size()));
  }
  if (options_.max_prompts == 0) throw InvalidArgument("max_prompts must be at least 1");
  steps_per_epoch_ = records.size() / batch_size;
}

SedBatch BatchSampler::batch(std::uint64_t step) const {
  const auto& records = *records_;
  SedBatch out;
  out.step = step;
  out.epoch = step / steps_per_epoch_;
  std::vector<std::size_t> perm(records.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng(seed_, streams::kEpochPermutation, out.epoch).shuffle(perm);
  const std::size_t start = (step % steps_per_epoch_) * batch_size_;

  const Rng step_rng(seed_, streams::kPromptSelection, step);
  for (std::size_t b = 0; b < batch_size_; ++b) {
    const std::size_t idx = perm[start + b];
    const MixtureRecord& rec = records[idx];
    Rng rng = step_rng.substream(b);
    BatchClip clip;
    clip.record = idx;

    // Same-caption events of one clip share a prompt; merge their activity.
    std::vector<BatchEvent> merged;
    std::map<std::string, std::size_t> seen;
    for (const EventLabel& ev : rec.events) {
      const std::string key = normalize_caption(ev.caption);
      auto [it, inserted] = seen.emplace(key, merged.size());
      if (inserted) {
        merged.push_back({ev.caption, ev.activity});
      } else {
        ActivityCurve& a = merged[it->second].activity;
        for (std::size_t f = 0; f < a.size(); ++f) a[f] = a[f] | ev.activity[f];
      }
    }
    if (merged.size() > options_.max_prompts) {
      std::vector<std::size_t> keep(merged.size());
      std::iota(keep.begin(), keep.end(), std::size_t{0});
      rng.shuffle(keep);
      keep.resize(options_.max_prompts);
      std::sort(keep.begin(), keep.end());
      std::vector<BatchEvent> kept;
      for (std::size_t k : keep) kept.push_back(std::move(merged[k]));
      merged = std::move(kept);
    }
    for (BatchEvent& ev : merged) {
      // Always draw so the stream layout does not depend on tag coverage.
      const bool swap = rng.bernoulli(options_.tag_prob);
      if (!swap) continue;
      auto it = options_.tags.find(normalize_caption(ev.caption));
      if (it != options_.tags.end()) ev.caption = it->second;
    }
    if (merged.empty()) {
      clip.global_caption = rec.background_caption;
    } else {
      const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(merged.size()) - 1));
      clip.global_caption = merged[pick].caption;
    }
    clip.events = std::move(merged);
    out.clips.push_back(std::move(clip));
  }
  return out;
}

SedBatch sample_batch(const std::vector<MixtureRecord>& records, std::size_t batch_size, std::uint64_t seed,
                      std::uint64_t step, const SamplerOptions& options) {
  return BatchSampler(records, batch_size, seed, options).batch(step);
}

}  // namespace flamkit
