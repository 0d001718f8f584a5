// SPDX-License-Identifier: Apache-2.0

#ifndef FLAMKIT_RINGSIM_H_
#define FLAMKIT_RINGSIM_H_

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "flamkit/batcher.h"
#include "flamkit/numcore.h"
#include "json.hpp"

namespace flamkit {

inline constexpr std::size_t kSlotsPerClip = 5;

// Text block that travels the ring. Gradient buffers travel with it.
struct TextSlotBlock {
  std::size_t owner = 0;
  Matrix embeddings;                       // slots x d, zero rows when masked
  std::vector<double> log_alpha, beta;     // slots
  std::vector<std::int64_t> prompt_index;  // slots, -1 when masked
  Matrix d_embeddings;
  std::vector<double> d_log_alpha, d_beta;

  std::size_t slots() const { return prompt_index.size(); }
  std::size_t elements() const;
};

struct DeviceShard {
  std::size_t device = 0;
  std::size_t first_clip = 0;
  std::size_t clips = 0;
  Matrix frames;    // clips*L x d
  Matrix d_frames;  // same shape
  TextSlotBlock block;  // the block this device owns
};

struct ShardedBatch {
  std::size_t original_clips = 0;
  LabelTensor labels;  // padded to a multiple of N clips
  std::vector<DeviceShard> shards;
};

// Contiguous clip split over N devices. Prompt k is owned by the device that
// holds the first clip listing it (device 0 if none does). Throws
// InvalidArgument when a device owns more prompts than its 5x slot budget.
ShardedBatch shard_batch(const Matrix& frames, const Matrix& prompts, std::span<const double> log_alpha,
                         std::span<const double> beta, const LabelTensor& z, std::size_t devices);

struct RingSchedule {
  std::size_t devices = 1;
  std::size_t hops = 0;  // devices - 1 transmissions
  // visit[d][h]: block resident on device d during compute round h.
  std::vector<std::vector<std::size_t>> visit;
  // transfers[h]: (sender, receiver) pairs after round h.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> transfers;
};

RingSchedule make_ring_schedule(std::size_t devices);
// True when every row and column of the visit matrix is a permutation.
bool is_latin_square(const RingSchedule& schedule);

struct RingOptions {
  bool threaded = false;  // one thread per device, barrier-separated rounds
};

struct RingResult {
  double loss = 0.0;
  std::uint64_t count = 0;
  // Assembled in unsharded layout for comparison with sed_loss.
  Matrix d_frames;   // original B*L x d
  Matrix d_prompts;  // K x d
  std::vector<double> d_log_alpha, d_beta;
  // coverage[i*K + k]: times the (clip, prompt) pair was scored.
  std::vector<std::uint32_t> coverage;
  // partials[d][h]: loss numerator from device d in round h.
  std::vector<std::vector<double>> partials;
};

RingResult ring_sed_loss(ShardedBatch& batch, const RingSchedule& schedule, const RingOptions& options = {});

struct DeviceMemory {
  std::size_t device = 0;
  std::size_t frames = 0;      // frame embeddings + their gradients
  std::size_t labels = 0;      // local label share
  std::size_t text_block = 0;  // one resident block with its gradients
  std::size_t accumulators = 0;
  std::size_t peak = 0;
  std::size_t hops = 0;
};

std::vector<DeviceMemory> peak_memory_report(const ShardedBatch& batch, const RingSchedule& schedule);
// Same accounting for one device holding the whole batch with 5B slots.
std::size_t monolithic_footprint(std::size_t B, std::size_t K, std::size_t L, std::size_t d);
nlohmann::json memory_report_to_json(const std::vector<DeviceMemory>& report);

}  // namespace flamkit

#endif  // FLAMKIT_RINGSIM_H_
