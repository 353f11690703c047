#include "stein_perturb/core.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <set>

using namespace stein_perturb;

TEST(Core, DerivedSeedsDifferAcrossTagsAndIndices) {
  std::set<std::uint64_t> seen;
  for (auto tag : {Stream::kBootstrap, Stream::kPerturb, Stream::kModeInit, Stream::kSplit, Stream::kProxy,
                   Stream::kData, Stream::kWeights}) {
    for (std::uint64_t i = 0; i < 100; ++i) seen.insert(derive_seed(7, tag, i));
  }
  EXPECT_EQ(seen.size(), 700u);
  EXPECT_EQ(derive_seed(7, Stream::kData, 3), derive_seed(7, Stream::kData, 3));
  EXPECT_NE(derive_seed(7, Stream::kData, 3), derive_seed(8, Stream::kData, 3));
}

TEST(Core, LinspaceHitsEndpoints) {
  const auto g = linspace(0.5, 1.5, 51);
  ASSERT_EQ(g.size(), 51u);
  EXPECT_EQ(g.front(), 0.5);
  EXPECT_EQ(g.back(), 1.5);
  EXPECT_NEAR(g[25], 1.0, 1e-15);
  EXPECT_EQ(linspace(2.0, 3.0, 1), std::vector<double>{2.0});
  EXPECT_THROW(linspace(0, 1, 0), InputError);
}

TEST(Core, LogSumExpIsStable) {
  EXPECT_NEAR(log_sum_exp(std::vector<double>{1000.0, 1000.0}), 1000.0 + std::log(2.0), 1e-12);
  EXPECT_NEAR(log_sum_exp(std::vector<double>{-1000.0, -1001.0}), -1000.0 + std::log1p(std::exp(-1.0)), 1e-12);
  const double ninf = -std::numeric_limits<double>::infinity();
  EXPECT_EQ(log_sum_exp(std::vector<double>{ninf, ninf}), ninf);
}

TEST(Core, ParallelForVisitsEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i].fetch_add(1); });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(Core, ParallelForRethrows) {
  EXPECT_THROW(parallel_for(50, [](std::size_t i) {
                 if (i == 17) throw InputError("boom");
               }),
               InputError);
}
