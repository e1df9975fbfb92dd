#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "divrank/metrics.hpp"
#include "test_util.hpp"

using namespace divrank;

namespace {

/// AUC by counting every positive/negative pair.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

std::vector<int> random_labels(std::size_t n, std::mt19937_64& rng) {
  std::bernoulli_distribution b(0.4);
  std::vector<int> y(n);
  for (auto& l : y) l = b(rng);
  y[0] = 1;
  y[1] = 0;
  return y;
}

}  // namespace

TEST(Ndcg, IdealRankingIsOne) {
  EXPECT_DOUBLE_EQ(ndcg_at_k({{1, 1, 0}}, 3), 1.0);
  EXPECT_DOUBLE_EQ(map_at_k({{1, 1, 0}}, 3), 1.0);
}

TEST(Ndcg, SingleHitAtSecondPosition) {
  EXPECT_NEAR(ndcg_at_k({{0, 1}}, 2), 1.0 / std::log2(3.0), 1e-15);
  EXPECT_NEAR(ndcg_at_k({{0, 1}}, 2), 0.6309, 1e-4);
  EXPECT_DOUBLE_EQ(map_at_k({{0, 1}}, 2), 0.5);
}

TEST(Ndcg, NothingRelevantIsZero) {
  EXPECT_EQ(ndcg_at_k({{0, 0, 0}}, 3), 0.0);
  EXPECT_EQ(map_at_k({{0, 0, 0}}, 3), 0.0);
  EXPECT_THROW(ndcg_at_k({{1}}, 0), ValidationError);
}

TEST(Ndcg, RelevantItemsOutsideListLowerTheIdeal) {
  LabeledRanking r{{1, 0}, 2};
  EXPECT_NEAR(ndcg_at_k(r, 2), 1.0 / (1.0 + 1.0 / std::log2(3.0)), 1e-15);
  EXPECT_DOUBLE_EQ(map_at_k(r, 2), 0.5);
}

TEST(Ndcg, BoundedAndMonotoneWhenHitMovesEarlier) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + t % 10;
    auto y = random_labels(n, rng);
    const std::size_t k = 1 + t % n;
    LabeledRanking r{y, 0};
    const double nd = ndcg_at_k(r, k), mp = map_at_k(r, k);
    EXPECT_GE(nd, 0.0);
    EXPECT_LE(nd, 1.0);
    EXPECT_GE(mp, 0.0);
    EXPECT_LE(mp, 1.0 + 1e-15);
    for (std::size_t i = 1; i < n; ++i) {
      if (!(y[i] == 1 && y[i - 1] == 0)) continue;
      LabeledRanking better = r;
      std::swap(better.labels[i], better.labels[i - 1]);
      EXPECT_GE(ndcg_at_k(better, k), nd - 1e-15);
      EXPECT_GE(map_at_k(better, k), mp - 1e-15);
    }
  }
}

TEST(Auc, Examples) {
  EXPECT_EQ(auc(std::vector<double>{0.2, 0.8}, std::vector<int>{1, 0}), 0.0);
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.1, 0.7}, std::vector<int>{1, 0, 1}), 1.0);
  EXPECT_EQ(auc(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}), 0.5);
  EXPECT_THROW(auc(std::vector<double>{0.5, 0.6}, std::vector<int>{1, 1}), ValidationError);
}

TEST(Auc, MatchesPairCountAndIgnoresMonotoneTransforms) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> coarse(0, 5);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 5 + t % 20;
    auto y = random_labels(n, rng);
    std::vector<double> s(n), s2(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse(rng) / 5.0;  // many ties
      s2[i] = std::exp(3.0 * s[i]) - 7.0;
    }
    const double a = auc(s, y);
    EXPECT_NEAR(a, pairwise_auc(s, y), 1e-12);
    EXPECT_EQ(a, auc(s2, y));
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(Logloss, HalfEverywhereIsLn2) {
  EXPECT_NEAR(logloss(std::vector<double>{0.5, 0.5, 0.5}, std::vector<int>{1, 0, 1}), std::log(2.0), 1e-9);
  EXPECT_NEAR(logloss(std::vector<double>{0.5}, std::vector<int>{0}), 0.6931, 1e-4);
}

TEST(Logloss, ClampsExtremes) {
  const double v = logloss(std::vector<double>{0.0, 1.0}, std::vector<int>{1, 0});
  EXPECT_TRUE(std::isfinite(v));
  // 1 - 1e-15 is not exact in double, so the upper clamp lands near 1.1e-15
  EXPECT_NEAR(v, -std::log(1e-15), 0.1);
}

TEST(Ilad, Examples) {
  EXPECT_EQ(ilad(std::vector<Vector>{{1, 0}, {0, 1}}), 1.0);
  EXPECT_NEAR(ilad(std::vector<Vector>{{1, 2}, {1, 2}, {2, 4}}), 0.0, 1e-15);
  // unit vectors at 60 degrees to each other
  const double s = std::sqrt(3.0) / 2.0;
  std::vector<Vector> tri{{1, 0, 0}, {0.5, s, 0}, {0.5, s / 3.0, std::sqrt(2.0 / 3.0)}};
  EXPECT_NEAR(ilad(tri), 0.5, 1e-12);
}

TEST(Ilad, ErrorsAndRange) {
  EXPECT_THROW(ilad(std::vector<Vector>{{1, 0}}), ValidationError);
  EXPECT_THROW(ilad(std::vector<Vector>{{1, 0}, {0, 0}}), ValidationError);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<Vector> list;
    for (int k = 0; k < 6; ++k) list.push_back(testutil::random_vector(4, rng));
    const double v = ilad(list);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 2.0);
  }
  EXPECT_NEAR(ilad(std::vector<Vector>{{1, 0}, {-1, 0}}), 2.0, 1e-15);
}

TEST(Spearman, PerfectAndReversed) {
  std::vector<double> x{1, 2, 3, 4}, y{10, 20, 25, 40}, z{4, 3, 2, 1};
  EXPECT_NEAR(spearman(x, y), 1.0, 1e-15);
  EXPECT_NEAR(spearman(x, z), -1.0, 1e-15);
  EXPECT_EQ(spearman(x, std::vector<double>{1, 1, 1, 1}), 0.0);
}
