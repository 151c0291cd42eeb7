#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include "hdaoe/rng.hpp"

using namespace hdaoe;

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xCBF29CE484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xAF63DC4C8601EC8CULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171F73967E8ULL);
}

TEST(Splitmix, KnownSequence) {
  // first outputs of the reference splitmix64 generator seeded with 0
  std::uint64_t state = 0;
  auto next = [&] {
    const std::uint64_t out = splitmix64(state);
    state += 0x9E3779B97F4A7C15ULL;
    return out;
  };
  EXPECT_EQ(next(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(next(), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(next(), 0x06C45D188009454FULL);
}

TEST(DeriveSeed, DistinctAcrossStreamsEpochsWorkers) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t w = 0; w < 3; ++w)
    for (std::uint64_t e = 0; e < 5; ++e)
      for (auto s : {Stream::kInit, Stream::kShuffle, Stream::kPartner, Stream::kDropout,
                     Stream::kData})
        seen.insert(derive_seed(42, w, e, s));
  EXPECT_EQ(seen.size(), 3u * 5u * 5u);
  EXPECT_EQ(derive_seed(1, 2, 3, Stream::kData), derive_seed(1, 2, 3, Stream::kData));
}

TEST(Rng, UniformRangeAndMean) {
  Rng r(3);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 20000, 0.5, 0.01);
}

TEST(Rng, BelowCoversRange) {
  Rng r(5);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 7000; ++i) ++hist[r.below(7)];
  for (int h : hist) EXPECT_GT(h, 850);
}

TEST(Rng, NormalMoments) {
  Rng r(9);
  double s = 0, s2 = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.03);
}

TEST(Rng, DiscreteSkipsZeroWeightsAndHandlesEmptyMass) {
  Rng r(1);
  const std::vector<double> w{0.0, 1.0, 0.0, 3.0};
  std::vector<int> hist(4, 0);
  for (int i = 0; i < 8000; ++i) ++hist[r.discrete(w)];
  EXPECT_EQ(hist[0], 0);
  EXPECT_EQ(hist[2], 0);
  EXPECT_NEAR(hist[3] / 8000.0, 0.75, 0.02);
  const std::vector<double> none{0.0, 0.0};
  EXPECT_EQ(r.discrete(none), none.size());
}

TEST(Rng, ShuffleIsSeededPermutation) {
  std::vector<int> a(50), b(50);
  std::iota(a.begin(), a.end(), 0);
  b = a;
  Rng r1(77), r2(77);
  r1.shuffle(a.begin(), a.end());
  r2.shuffle(b.begin(), b.end());
  EXPECT_EQ(a, b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}
