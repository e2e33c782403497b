#include <gtest/gtest.h>

#include <random>

#include "coffee/trace.hpp"
#include "coffee/transgain.hpp"

namespace coffee {
namespace {

// Independent total gain: walk every level and classify it directly.
double brute_gain(const std::vector<bool>& in, const std::vector<double>& p, const std::vector<double>& w,
                  const std::vector<double>& t, double bc) {
  const int m = static_cast<int>(in.size());
  double g = 0;
  for (int k = 0; k < m; ++k) {
    if (in[k]) {
      g += p[k] * w[k] * bc;
      continue;
    }
    bool higher = false;
    for (int j = k + 1; j < m; ++j) higher = higher || in[j];
    if (higher && p[k] * (w[k] * bc - t[k]) > 0) g += p[k] * (w[k] * bc - t[k]);
  }
  return g;
}

TEST(CoveredSet, HighestOnly) { EXPECT_EQ(covered_set(make_level_set({5})), make_level_set({0, 1, 2, 3, 4})); }

TEST(CoveredSet, LowestOnly) { EXPECT_EQ(covered_set(make_level_set({0})), 0u); }

TEST(CoveredSet, Mixed) { EXPECT_EQ(covered_set(make_level_set({2, 4})), make_level_set({0, 1, 3})); }

CostModel model(double bc, std::vector<double> t, double td = 1.0) {
  CostModel c;
  c.download_per_byte = bc;
  c.transcode_base = std::move(t);
  c.td_scale = td;
  return c;
}

TEST(TotalGain, Empty) {
  const std::vector<double> p{1, 1, 1}, w{1, 2, 4};
  EXPECT_DOUBLE_EQ(total_gain(0, p, model(0.09, {0.01, 0.02, 0.04}), w), 0.0);
}

TEST(TotalGain, ClampedTranscodeTerm) {
  const std::vector<double> p{3, 2, 1}, w{1, 2, 4};
  EXPECT_DOUBLE_EQ(total_gain(make_level_set({2}), p, model(0.09, {100, 100, 100}), w), 1 * 4 * 0.09);
}

TEST(TotalGain, ThreeLevelHandValue) {
  const std::vector<double> p{1, 1, 1}, w{1, 2, 4};
  EXPECT_NEAR(total_gain(make_level_set({2}), p, model(0.09, {0.01, 0.02, 0.04}), w), 0.60, 1e-15);
}

TEST(MarginalGain, HigherLevelCached) {
  // P_r = 2, T_r = 0.005 $, w = 1 GB, B_c = 0.09 $/GB -> P_r T_r / w = 0.01 $/GB
  const std::vector<double> p{2, 0}, w{1, 2};
  const auto c = model(0.09, {0.005, 0.0});
  EXPECT_NEAR(marginal_unit_gain(0, make_level_set({1}), p, c, w), 0.01, 1e-15);
  EXPECT_NEAR(marginal_unit_gain_by_difference(0, make_level_set({1}), p, c, w), 0.01, 1e-15);
}

TEST(MarginalGain, TopLevelWithoutTranscodeBenefit) {
  const std::vector<double> p{1, 2, 3, 4}, w{1, 2, 3, 4};
  const auto c = model(0.09, {1, 1, 1, 1});
  EXPECT_DOUBLE_EQ(marginal_unit_gain(3, 0, p, c, w), 4 * 0.09);
}

TEST(MarginalGain, AlreadyCachedThrows) {
  const std::vector<double> p{1, 1}, w{1, 2};
  EXPECT_THROW(marginal_unit_gain(1, make_level_set({1}), p, model(0.09, {0, 0}), w), LevelAlreadyCached);
  EXPECT_THROW(marginal_unit_gain_by_difference(1, make_level_set({1}), p, model(0.09, {0, 0}), w), LevelAlreadyCached);
}

TEST(MarginalGain, MatchesBruteForceOverAllSubsets) {
  std::mt19937_64 rng(77);
  int checked = 0;
  for (int m : {2, 3, 4, 6}) {
    for (int inst = 0; inst < 300; ++inst) {
      std::vector<double> p(m), w(m), t(m);
      double acc = 0;
      for (int k = 0; k < m; ++k) {
        p[k] = rng() % 4 == 0 ? 0.0 : 20 * unit_uniform(rng);
        acc += 0.1 + 3 * unit_uniform(rng);
        w[k] = acc;
        t[k] = 0.3 * unit_uniform(rng);
      }
      const double bc = 0.01 + 0.2 * unit_uniform(rng);
      const auto c = model(bc, t);
      for (LevelSet in = 0; in < level_bit(m); ++in) {
        std::vector<bool> flags(m);
        for (int k = 0; k < m; ++k) flags[k] = has_level(in, k);
        ASSERT_NEAR(total_gain(in, p, c, w), brute_gain(flags, p, w, t, bc), 1e-12 * (1 + brute_gain(flags, p, w, t, bc)));
        for (int r = 0; r < m; ++r) {
          if (has_level(in, r)) continue;
          auto with = flags;
          with[r] = true;
          const double g1 = brute_gain(with, p, w, t, bc), g0 = brute_gain(flags, p, w, t, bc);
          const double want = (g1 - g0) / w[r];
          const double tol = 1e-12 * std::max({std::abs(g1), std::abs(g0), 1e-300}) / w[r];
          EXPECT_NEAR(marginal_unit_gain(r, in, p, c, w), want, tol);
          EXPECT_GE(marginal_unit_gain(r, in, p, c, w), -tol);
          ++checked;
        }
      }
    }
  }
  EXPECT_GE(checked, 1000);
}

TEST(MarginalGain, MonotoneInOwnPopularity) {
  std::mt19937_64 rng(5);
  for (int inst = 0; inst < 500; ++inst) {
    const int m = 4;
    std::vector<double> p(m), w{1, 2, 3, 5}, t(m);
    for (int k = 0; k < m; ++k) {
      p[k] = 5 * unit_uniform(rng);
      t[k] = 0.5 * unit_uniform(rng);
    }
    const auto c = model(0.1, t);
    const LevelSet in = static_cast<LevelSet>(rng() % 16);
    for (int r = 0; r < m; ++r) {
      if (has_level(in, r)) continue;
      auto q = p;
      q[r] += unit_uniform(rng);
      EXPECT_GE(marginal_unit_gain(r, in, q, c, w), marginal_unit_gain(r, in, p, c, w) - 1e-15);
    }
  }
}

TEST(MarginalGain, FreeTranscodingMakesLowerCopiesWorthless) {
  const TileGridSpec g;
  const auto c = CostModel::aws(g, 0.0);
  std::vector<double> w, p{3, 1, 4, 1, 5, 9};
  for (int k = 0; k < g.levels(); ++k) w.push_back(double(g.size(k)));
  for (int r = 0; r < 5; ++r) EXPECT_DOUBLE_EQ(marginal_unit_gain(r, level_bit(5), p, c, w), 0.0);
}

TEST(MarginalGain, ExpensiveTranscodingLeavesDownloadSavingOnly) {
  const TileGridSpec g;
  for (double td : {1.0, 1.5, 4.0}) {
    const auto c = CostModel::td_ratio(g, td);
    std::vector<double> w, p{3, 1, 4, 1, 5, 9};
    for (int k = 0; k < g.levels(); ++k) w.push_back(double(g.size(k)));
    for (LevelSet in = 0; in < 64; ++in)
      for (int r = 0; r < 6; ++r) {
        if (has_level(in, r)) continue;
        EXPECT_NEAR(marginal_unit_gain(r, in, p, c, w), p[r] * c.download_per_byte, 1e-24);
      }
  }
}

TEST(CostModel, AwsTiers) {
  const TileGridSpec g;
  const auto c = CostModel::aws(g);
  EXPECT_DOUBLE_EQ(c.transcode(0), 0.0113 / 60);
  EXPECT_DOUBLE_EQ(c.transcode(1), 0.0113 / 60);
  EXPECT_DOUBLE_EQ(c.transcode(2), 0.0225 / 60);
  EXPECT_DOUBLE_EQ(c.transcode(3), 0.0225 / 60);
  EXPECT_DOUBLE_EQ(c.transcode(4), 0.045 / 60);
  EXPECT_DOUBLE_EQ(c.transcode(5), 0.045 / 60);
  EXPECT_DOUBLE_EQ(c.download(1e9), 0.09);
}

TEST(CostModel, TdRatioIsExactRatio) {
  const TileGridSpec g;
  const auto c = CostModel::td_ratio(g, 0.5);
  for (int k = 0; k < g.levels(); ++k) {
    EXPECT_NEAR(c.transcode(k) / c.download(double(g.size(k))), 0.5, 1e-15);
    EXPECT_TRUE(c.transcode_cheaper(k, double(g.size(k))));
    EXPECT_FALSE(CostModel::td_ratio(g, 1.0).transcode_cheaper(k, double(g.size(k))));
  }
}

}  // namespace
}  // namespace coffee
