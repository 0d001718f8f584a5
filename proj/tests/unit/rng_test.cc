#include "flamkit/rng.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flamkit/numcore.h"
#include "flamkit/parallel.h"

namespace flamkit {
namespace {

TEST(Rng, SameKeySameStream) {
  Rng a(42, 1, 7), b(42, 1, 7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DistinctKeysDiffer) {
  Rng a(42, 1, 7), b(42, 1, 8), c(42, 2, 7), d(43, 1, 7);
  const auto x = a.next_u64();
  EXPECT_NE(x, b.next_u64());
  EXPECT_NE(x, c.next_u64());
  EXPECT_NE(x, d.next_u64());
}

TEST(Rng, SubstreamIndependentOfParentProgress) {
  Rng a(1), b(1);
  for (int i = 0; i < 10; ++i) a.next_u64();
  Rng ca = a.substream(3, 4), cb = b.substream(3, 4);
  EXPECT_EQ(ca.next_u64(), cb.next_u64());
}

TEST(Rng, UniformMoments) {
  Rng r(9, streams::kTest);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 0.005);
  EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 12.0, 0.002);
}

TEST(Rng, NormalMoments) {
  Rng r(10, streams::kTest);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, UniformIntCoversClosedRange) {
  Rng r(12, streams::kTest);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 100000; ++i) counts[static_cast<std::size_t>(r.uniform_int(1, 10) - 1)]++;
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
  EXPECT_THROW(r.uniform_int(3, 2), Error);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(13, streams::kTest);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  r.shuffle(v);
  std::vector<int> sorted(v);
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(ParallelFor, PropagatesExceptions) {
  EXPECT_THROW(parallel_for(100, 3,
                            [](std::size_t i) {
                              if (i == 37) throw InvalidArgument("boom");
                            }),
               InvalidArgument);
}

}  // namespace
}  // namespace flamkit
