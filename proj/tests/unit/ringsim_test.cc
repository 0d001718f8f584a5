#include "flamkit/ringsim.h"

#include <gtest/gtest.h>

#include "flamkit/objectives.h"
#include "flamkit/rng.h"

namespace flamkit {
namespace {

struct Instance {
  Matrix frames, prompts;
  std::vector<double> la, beta;
  LabelTensor z;
};

// B clips listing prompts (i + j) mod K, j < 3.
Instance make_instance(std::size_t B, std::size_t K, std::size_t L, std::size_t d, std::uint64_t seed) {
  Rng rng(seed, streams::kTest, 0);
  auto unit_rows = [&](std::size_t n) {
    Matrix m(n, d);
    for (std::size_t r = 0; r < n; ++r) {
      for (double& v : m.row(r)) v = rng.normal();
      const auto u = l2_normalize(m.row(r));
      std::copy(u.begin(), u.end(), m.row(r).begin());
    }
    return m;
  };
  Instance in{unit_rows(B * L), unit_rows(K), {}, {}, make_label_tensor(B, K, L)};
  for (std::size_t k = 0; k < K; ++k) {
    in.la.push_back(rng.uniform(0.0, 3.0));
    in.beta.push_back(rng.uniform(-8.0, 0.0));
    in.z.prompt_valid[k] = 1;
  }
  for (std::size_t i = 0; i < B; ++i) {
    in.z.clip_valid[i] = 1;
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t l = 0; l < L; ++l) in.z.at(i, k, l) = -1;
    }
    for (std::size_t j = 0; j < 3 && j < K; ++j) {
      const std::size_t k = (i + j) % K;
      in.z.present[i * K + k] = 1;
      for (std::size_t l = 0; l < L; ++l) in.z.at(i, k, l) = rng.bernoulli(0.4) ? 1 : -1;
    }
  }
  return in;
}

TEST(RingSchedule, LatinSquareWithNMinusOneHops) {
  for (std::size_t n = 1; n <= 8; ++n) {
    const RingSchedule s = make_ring_schedule(n);
    EXPECT_EQ(s.hops, n - 1);
    EXPECT_TRUE(is_latin_square(s)) << n;
    for (std::size_t d = 0; d < n; ++d) EXPECT_EQ(s.visit[d][0], d);
  }
}

TEST(RingSedLoss, MatchesMonolithicLoss) {
  for (std::size_t n : {1u, 2u, 3u, 4u}) {
    Instance in = make_instance(8, 6, 5, 4, 10 + n);
    const auto mono = sed_loss(in.frames, in.prompts, in.la, in.beta, in.z);
    ShardedBatch sb = shard_batch(in.frames, in.prompts, in.la, in.beta, in.z, n);
    for (bool threaded : {false, true}) {
      ShardedBatch copy = sb;
      const RingResult r = ring_sed_loss(copy, make_ring_schedule(n), {threaded});
      EXPECT_EQ(r.count, mono.count);
      EXPECT_NEAR(r.loss, mono.loss, 1e-12 * mono.loss);
      EXPECT_LT(max_relative_error(r.d_frames.data(), mono.grads.d_frames.data()), 1e-9);
      EXPECT_LT(max_relative_error(r.d_prompts.data(), mono.grads.d_prompts.data()), 1e-9);
      EXPECT_LT(max_relative_error(r.d_log_alpha, mono.grads.d_log_alpha), 1e-9);
      EXPECT_LT(max_relative_error(r.d_beta, mono.grads.d_beta), 1e-9);
      // Clips past B are padding and never scored.
      for (std::size_t i = 0; i < copy.labels.B; ++i) {
        for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(r.coverage[i * 6 + k], i < 8 ? 1u : 0u);
      }
    }
  }
}

TEST(RingSedLoss, PadsToMultipleOfDevices) {
  Instance in = make_instance(5, 4, 3, 3, 2);
  ShardedBatch sb = shard_batch(in.frames, in.prompts, in.la, in.beta, in.z, 4);
  EXPECT_EQ(sb.original_clips, 5u);
  EXPECT_EQ(sb.labels.B, 8u);
  const RingResult r = ring_sed_loss(sb, make_ring_schedule(4));
  EXPECT_EQ(r.d_frames.rows(), 5u * 3u);
  EXPECT_NEAR(r.loss, sed_loss(in.frames, in.prompts, in.la, in.beta, in.z).loss, 1e-12);
}

TEST(ShardBatch, RejectsOverfullDevice) {
  // One clip lists 6 prompts, all owned by its device with 5 slots.
  Instance in = make_instance(2, 6, 2, 3, 1);
  for (std::size_t k = 0; k < 6; ++k) in.z.present[k] = 1;
  EXPECT_THROW(shard_batch(in.frames, in.prompts, in.la, in.beta, in.z, 2), InvalidArgument);
}

TEST(MemoryReport, ShardedPeakBelowMonolithic) {
  Instance in = make_instance(16, 20, 32, 64, 3);
  for (std::size_t n : {2u, 4u, 8u}) {
    const ShardedBatch sb = shard_batch(in.frames, in.prompts, in.la, in.beta, in.z, n);
    const auto report = peak_memory_report(sb, make_ring_schedule(n));
    ASSERT_EQ(report.size(), n);
    for (const auto& d : report) {
      EXPECT_LT(d.peak, monolithic_footprint(16, 20, 32, 64));
      EXPECT_EQ(d.hops, n - 1);
    }
    EXPECT_EQ(memory_report_to_json(report).size(), n);
  }
}

}  // namespace
}  // namespace flamkit
