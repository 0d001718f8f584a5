// SPDX-License-Identifier: Apache-2.0

#include "flamkit/ringsim.h"

#include <barrier>
#include <thread>

#include "flamkit/objectives.h"

namespace flamkit {

std::size_t TextSlotBlock::elements() const {
  return embeddings.size() + d_embeddings.size() + log_alpha.size() + beta.size() + prompt_index.size() +
         d_log_alpha.size() + d_beta.size();
}

ShardedBatch shard_batch(const Matrix& frames, const Matrix& prompts, std::span<const double> log_alpha,
                         std::span<const double> beta, const LabelTensor& z, std::size_t devices) {
  if (devices == 0) throw InvalidArgument("shard_batch: need at least one device");
  if (frames.rows() != z.B * z.L || prompts.rows() != z.K || log_alpha.size() != z.K || beta.size() != z.K) {
    throw InvalidArgument("shard_batch: inconsistent shapes");
  }
  const std::size_t d = z.K > 0 ? prompts.cols() : frames.cols();
  const std::size_t L = z.L;
  const std::size_t B = (z.B + devices - 1) / devices * devices;
  const std::size_t per = B / devices;

  ShardedBatch out;
  out.original_clips = z.B;
  out.labels = make_label_tensor(B, z.K, L);
  std::copy(z.z.begin(), z.z.end(), out.labels.z.begin());
  std::copy(z.clip_valid.begin(), z.clip_valid.end(), out.labels.clip_valid.begin());
  std::fill(out.labels.clip_valid.begin() + static_cast<std::ptrdiff_t>(z.B), out.labels.clip_valid.end(), 0);
  out.labels.prompt_valid = z.prompt_valid;
  std::copy(z.present.begin(), z.present.end(), out.labels.present.begin());

  std::vector<std::vector<std::size_t>> owned(devices);
  for (std::size_t k = 0; k < z.K; ++k) {
    std::size_t owner = 0;
    for (std::size_t i = 0; i < z.B; ++i) {
      if (z.present[i * z.K + k]) {
        owner = i / per;
        break;
      }
    }
    owned[owner].push_back(k);
  }

  const std::size_t slots = kSlotsPerClip * per;
  for (std::size_t dev = 0; dev < devices; ++dev) {
    if (owned[dev].size() > slots) {
      throw InvalidArgument("device " + std::to_string(dev) + " owns " + std::to_string(owned[dev].size()) +
                            " prompts but has " + std::to_string(slots) + " text slots");
    }
    DeviceShard s;
    s.device = dev;
    s.first_clip = dev * per;
    s.clips = per;
    s.frames = Matrix(per * L, d);
    s.d_frames = Matrix(per * L, d);
    for (std::size_t c = 0; c < per; ++c) {
      const std::size_t i = s.first_clip + c;
      if (i >= z.B) break;
      for (std::size_t l = 0; l < L; ++l) {
        const auto src = frames.row(i * L + l);
        std::copy(src.begin(), src.end(), s.frames.row(c * L + l).begin());
      }
    }
    TextSlotBlock& b = s.block;
    b.owner = dev;
    b.embeddings = Matrix(slots, d);
    b.d_embeddings = Matrix(slots, d);
    b.log_alpha.assign(slots, 0.0);
    b.beta.assign(slots, 0.0);
    b.prompt_index.assign(slots, -1);
    b.d_log_alpha.assign(slots, 0.0);
    b.d_beta.assign(slots, 0.0);
    for (std::size_t j = 0; j < owned[dev].size(); ++j) {
      const std::size_t k = owned[dev][j];
      const auto src = prompts.row(k);
      std::copy(src.begin(), src.end(), b.embeddings.row(j).begin());
      b.log_alpha[j] = log_alpha[k];
      b.beta[j] = beta[k];
      b.prompt_index[j] = static_cast<std::int64_t>(k);
    }
    out.shards.push_back(std::move(s));
  }
  return out;
}

RingSchedule make_ring_schedule(std::size_t devices) {
  if (devices == 0) throw InvalidArgument("ring schedule: need at least one device");
  RingSchedule s;
  s.devices = devices;
  s.hops = devices - 1;
  s.visit.assign(devices, std::vector<std::size_t>(devices));
  for (std::size_t dev = 0; dev < devices; ++dev) {
    for (std::size_t h = 0; h < devices; ++h) s.visit[dev][h] = (dev + devices - h) % devices;
  }
  for (std::size_t h = 0; h < s.hops; ++h) {
    std::vector<std::pair<std::size_t, std::size_t>> t;
    for (std::size_t dev = 0; dev < devices; ++dev) t.emplace_back(dev, (dev + 1) % devices);
    s.transfers.push_back(std::move(t));
  }
  return s;
}

bool is_latin_square(const RingSchedule& s) {
  const std::size_t n = s.devices;
  if (s.visit.size() != n) return false;
  for (std::size_t dev = 0; dev < n; ++dev) {
    if (s.visit[dev].size() != n) return false;
    std::vector<bool> row(n, false);
    for (std::size_t h = 0; h < n; ++h) {
      if (s.visit[dev][h] >= n || row[s.visit[dev][h]]) return false;
      row[s.visit[dev][h]] = true;
    }
  }
  for (std::size_t h = 0; h < n; ++h) {
    std::vector<bool> col(n, false);
    for (std::size_t dev = 0; dev < n; ++dev) {
      if (col[s.visit[dev][h]]) return false;
      col[s.visit[dev][h]] = true;
    }
  }
  return true;
}

RingResult ring_sed_loss(ShardedBatch& batch, const RingSchedule& schedule, const RingOptions& options) {
  const std::size_t N = batch.shards.size();
  if (schedule.devices != N || schedule.hops + 1 != N || schedule.visit.size() != N) {
    throw InvalidArgument("ring schedule does not match the shard count");
  }
  const LabelTensor& z = batch.labels;
  RingResult r;
  r.coverage.assign(z.B * z.K, 0);
  r.partials.assign(N, std::vector<double>(N, 0.0));
  std::vector<std::vector<std::uint64_t>> counts(N, std::vector<std::uint64_t>(N, 0));

  // resident[d] is the block currently held by device d.
  std::vector<TextSlotBlock> resident(N);
  for (std::size_t dev = 0; dev < N; ++dev) {
    batch.shards[dev].d_frames.fill(0.0);
    TextSlotBlock& b = resident[dev] = batch.shards[dev].block;
    b.d_embeddings.fill(0.0);
    std::fill(b.d_log_alpha.begin(), b.d_log_alpha.end(), 0.0);
    std::fill(b.d_beta.begin(), b.d_beta.end(), 0.0);
  }

  auto compute = [&](std::size_t dev, std::size_t h) {
    DeviceShard& s = batch.shards[dev];
    TextSlotBlock& b = resident[dev];
    if (b.owner != schedule.visit[dev][h]) throw InvalidArgument("ring: resident block does not match the schedule");
    ClipRange cr{&s.frames, s.first_clip, s.clips, &s.d_frames};
    PromptBlock pb{&b.embeddings, b.log_alpha, b.beta, b.prompt_index, &b.d_embeddings, b.d_log_alpha, b.d_beta};
    std::vector<double> terms;
    sed_kernel(cr, pb, z, terms, [&](std::size_t i, std::size_t k) { ++r.coverage[i * z.K + k]; });
    r.partials[dev][h] = pairwise_sum(terms);
    counts[dev][h] = terms.size();
  };
  auto rotate = [&]() noexcept {
    std::vector<TextSlotBlock> next(N);
    for (std::size_t dev = 0; dev < N; ++dev) next[(dev + 1) % N] = std::move(resident[dev]);
    resident = std::move(next);
  };

  if (options.threaded && N > 1) {
    std::barrier sync(static_cast<std::ptrdiff_t>(N), rotate);
    std::vector<std::exception_ptr> errors(N);
    {
      std::vector<std::jthread> pool;
      for (std::size_t dev = 0; dev < N; ++dev) {
        pool.emplace_back([&, dev] {
          for (std::size_t h = 0; h < N; ++h) {
            try {
              if (!errors[dev]) compute(dev, h);
            } catch (...) {
              errors[dev] = std::current_exception();
            }
            sync.arrive_and_wait();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (std::size_t h = 0; h < N; ++h) {
      for (std::size_t dev = 0; dev < N; ++dev) compute(dev, h);
      rotate();
    }
  }
  // N rotations bring every block back to its owner.

  std::vector<double> flat;
  for (std::size_t dev = 0; dev < N; ++dev) {
    for (std::size_t h = 0; h < N; ++h) {
      flat.push_back(r.partials[dev][h]);
      r.count += counts[dev][h];
    }
  }

  const std::size_t L = z.L;
  const std::size_t d = batch.shards.empty() ? 0 : batch.shards[0].frames.cols();
  r.d_frames = Matrix(batch.original_clips * L, d);
  r.d_prompts = Matrix(z.K, d);
  r.d_log_alpha.assign(z.K, 0.0);
  r.d_beta.assign(z.K, 0.0);
  if (r.count == 0) return r;
  const double inv = 1.0 / static_cast<double>(r.count);
  r.loss = pairwise_sum(flat) * inv;

  for (std::size_t dev = 0; dev < N; ++dev) {
    DeviceShard& s = batch.shards[dev];
    for (double& v : s.d_frames.data()) v *= inv;
    for (std::size_t c = 0; c < s.clips; ++c) {
      const std::size_t i = s.first_clip + c;
      if (i >= batch.original_clips) break;
      for (std::size_t l = 0; l < L; ++l) {
        const auto src = s.d_frames.row(c * L + l);
        std::copy(src.begin(), src.end(), r.d_frames.row(i * L + l).begin());
      }
    }
    TextSlotBlock& b = resident[dev];
    if (b.owner != dev) throw Error("ring: block did not return to its owner");
    for (std::size_t j = 0; j < b.slots(); ++j) {
      if (b.prompt_index[j] < 0) continue;
      const auto k = static_cast<std::size_t>(b.prompt_index[j]);
      auto dst = r.d_prompts.row(k);
      const auto src = b.d_embeddings.row(j);
      for (std::size_t x = 0; x < d; ++x) dst[x] = src[x] * inv;
      r.d_log_alpha[k] = b.d_log_alpha[j] * inv;
      r.d_beta[k] = b.d_beta[j] * inv;
    }
    s.block = std::move(b);
  }
  return r;
}

std::vector<DeviceMemory> peak_memory_report(const ShardedBatch& batch, const RingSchedule& schedule) {
  std::vector<DeviceMemory> out;
  const std::size_t N = batch.shards.size();
  for (const DeviceShard& s : batch.shards) {
    DeviceMemory m;
    m.device = s.device;
    m.frames = s.frames.size() + s.d_frames.size();
    m.labels = s.clips * batch.labels.K * batch.labels.L;
    // Blocks are the same size everywhere, so the resident one can be sized
    // from the owned block.
    m.text_block = s.block.elements();
    m.accumulators = 2 * N;  // partial numerators and counts per round
    m.peak = m.frames + m.labels + m.text_block + m.accumulators;
    m.hops = schedule.hops;
    out.push_back(m);
  }
  return out;
}

std::size_t monolithic_footprint(std::size_t B, std::size_t K, std::size_t L, std::size_t d) {
  const std::size_t slots = kSlotsPerClip * B;
  return 2 * B * L * d + B * K * L + (2 * slots * d + 5 * slots) + 2;
}

nlohmann::json memory_report_to_json(const std::vector<DeviceMemory>& report) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& m : report) {
    j.push_back({{"device", m.device},
                 {"peak_elements", m.peak},
                 {"frames", m.frames},
                 {"labels", m.labels},
                 {"text_block", m.text_block},
                 {"accumulators", m.accumulators},
                 {"hops", m.hops}});
  }
  return j;
}

}  // namespace flamkit
