#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "divrank/selection.hpp"
#include "test_util.hpp"

using namespace divrank;

namespace {

KernelMatrix dense(const std::vector<std::vector<double>>& rows) { return KernelMatrix::from_rows(rows); }

std::vector<std::size_t> indices(const RerankResult& r) {
  std::vector<std::size_t> out;
  for (const auto& id : r.item_ids) out.push_back(std::stoul(id));
  return out;
}

SelectionOptions opts(double alpha, std::size_t K) {
  SelectionOptions o;
  o.alpha = alpha;
  o.K = K;
  return o;
}

/// Scorer whose score depends on how many items were picked so far.
struct CountingScorer {
  std::vector<double> base;
  std::size_t seen = 0;
  double score(std::size_t i) const { return base[i] * std::pow(0.9, static_cast<double>((i + seen) % 3)); }
  void observe(std::size_t) { ++seen; }
};

/// log det of D restricted to `s` by cofactor expansion.
double naive_log_det(const KernelMatrix& D, const std::vector<std::size_t>& s) {
  std::vector<std::vector<double>> a(s.size(), std::vector<double>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) a[i][j] = D(s[i], s[j]);
  return s.empty() ? 0.0 : std::log(testutil::cofactor_det(a));
}

}  // namespace

TEST(BsDpp, IdentityKernelIsScoreOrder) {
  auto D = dense({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  for (double alpha : {0.0, 0.3, 1.0, 10.0}) {
    std::vector<double> g{0.9, 0.5, 0.1};
    auto r = fixed_score_dpp_select(D, g, opts(alpha, 3), std::vector<std::string>{"i1", "i2", "i3"});
    EXPECT_EQ(r.item_ids, (std::vector<std::string>{"i1", "i2", "i3"}));
    EXPECT_FALSE(r.short_list);
  }
}

TEST(BsDpp, DuplicateCollapsesToZeroResidual) {
  auto D = dense({{1, 1, 0}, {1, 1, 0}, {0, 0, 1}});
  std::vector<double> g{0.9, 0.9, 0.5};
  const std::vector<std::string> ids{"i1", "i2", "i3"};
  auto r = fixed_score_dpp_select(D, g, opts(1.0, 2), ids);
  EXPECT_EQ(r.item_ids, (std::vector<std::string>{"i1", "i3"}));
  auto best = exhaustive_map(D, g, 1.0, 2);
  EXPECT_EQ(best.subset, (std::vector<std::size_t>{0, 2}));
  EXPECT_NEAR(best.objective, 1.4, 1e-12);
  const std::vector<std::size_t> dup{0, 1};
  EXPECT_EQ(joint_objective(D, g, 1.0, dup), -std::numeric_limits<double>::infinity());
}

TEST(BsDpp, FirstUpdateMatchesTwoByTwoDeterminant) {
  auto D = dense({{1, 0.5}, {0.5, 1}});
  std::vector<double> g{0.9, 0.1};
  FixedScorer s(g);
  bool checked = false;
  bs_dpp_select(D, s, opts(1.0, 1), {}, [&](const CholeskySelectionState& st) {
    EXPECT_DOUBLE_EQ(st.row(1)[0], 0.5);
    EXPECT_DOUBLE_EQ(st.d2[1], 0.75);
    EXPECT_NEAR(st.d2[1], testutil::cofactor_det({{1, 0.5}, {0.5, 1}}), 1e-15);
    checked = true;
  });
  EXPECT_TRUE(checked);
}

TEST(BsDpp, TiesGoToLowestIndex) {
  auto D = dense({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  std::vector<double> g{0.4, 0.7, 0.7};
  auto r = fixed_score_dpp_select(D, g, opts(1.0, 1));
  EXPECT_EQ(indices(r), (std::vector<std::size_t>{1}));
}

TEST(BsDpp, CholeskyResidualsMatchNaiveDeterminants) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 40; ++t) {
    const std::size_t n = 4 + t % 12, K = std::min<std::size_t>(n, 2 + t % 6);
    auto D = KernelMatrix::from_rows(testutil::random_psd(n, rng));
    const auto g = testutil::random_vector(n, rng, 0, 1);
    const double alpha = 0.5 + t % 3;
    FixedScorer s(g);
    bs_dpp_select(D, s, opts(alpha, K), {}, [&](const CholeskySelectionState& st) {
      const double base = naive_log_det(D, st.selected);
      for (std::size_t i = 0; i < n; ++i) {
        if (st.taken[i]) continue;
        auto with = st.selected;
        with.push_back(i);
        EXPECT_NEAR(alpha * std::log(st.d2[i]), alpha * (naive_log_det(D, with) - base), 1e-8);
        double c2 = 0.0;
        for (double c : st.row(i)) c2 += c * c;
        EXPECT_NEAR(st.d2[i], D(i, i) - c2, 1e-9);
      }
    });
  }
}

TEST(BsDpp, ExcludedCandidatesNeverReturn) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 30; ++t) {
    // rank-deficient kernel: 8 items in 3 dimensions
    const std::size_t n = 8;
    auto f = testutil::random_matrix(n, 3, rng);
    std::vector<std::vector<double>> rows(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < 3; ++k) rows[i][j] += f[i][k] * f[j][k];
    auto D = KernelMatrix::from_rows(rows);
    const auto g = testutil::random_vector(n, rng, 0, 1);
    FixedScorer s(g);
    SelectionOptions o = opts(1.0, n);
    o.epsilon = 1e-6;
    std::vector<char> excluded(n, 0);
    auto r = bs_dpp_select(D, s, o, {}, [&](const CholeskySelectionState& st) {
      EXPECT_FALSE(excluded[st.selected.back()]);
      for (std::size_t i = 0; i < n; ++i)
        if (!st.taken[i] && st.d2[i] <= o.epsilon) excluded[i] = 1;
    });
    EXPECT_TRUE(r.short_list);
    EXPECT_LE(r.item_ids.size(), 3u);
  }
}

TEST(BsDpp, AlphaZeroIsDescendingScore) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 12;
    auto D = KernelMatrix::from_rows(testutil::random_psd(n, rng));
    const auto g = testutil::random_vector(n, rng, 0, 1);
    auto r = fixed_score_dpp_select(D, g, opts(0.0, n));
    std::vector<std::size_t> want(n);
    std::iota(want.begin(), want.end(), 0);
    std::stable_sort(want.begin(), want.end(), [&](std::size_t a, std::size_t b) { return g[a] > g[b]; });
    EXPECT_EQ(indices(r), want);
  }
}

TEST(BsDpp, PaperLiteralInitSeedsByResidualAlone) {
  auto D = dense({{1, 0, 0}, {0, 2, 0}, {0, 0, 1}});
  std::vector<double> g{0.9, 0.1, 0.5};
  auto o = opts(0.01, 1);
  EXPECT_EQ(indices(fixed_score_dpp_select(D, g, o)), (std::vector<std::size_t>{0}));
  o.paper_literal_init = true;
  EXPECT_EQ(indices(fixed_score_dpp_select(D, g, o)), (std::vector<std::size_t>{1}));
}

TEST(BsDpp, ErrorsOnBadK) {
  auto D = dense({{1, 0}, {0, 1}});
  std::vector<double> g{0.5, 0.5};
  EXPECT_THROW(fixed_score_dpp_select(D, g, opts(1.0, 3)), ValidationError);
  EXPECT_THROW(fixed_score_dpp_select(D, g, opts(1.0, 0)), ValidationError);
}

TEST(BsDpp, ContextScorerIsRescoredEveryStep) {
  auto D = dense({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  CountingScorer s{{0.5, 0.55, 0.6}};
  auto r = bs_dpp_select(D, s, opts(1.0, 3));
  // step 1 scores: 0.5, 0.495, 0.486 -> 0; step 2 (seen=1): 0.55*0.81, 0.6 -> 2
  EXPECT_EQ(indices(r), (std::vector<std::size_t>{0, 2, 1}));
  EXPECT_NEAR(r.steps[1].score, 0.6, 1e-15);
}

TEST(BsDpp, Deterministic) {
  std::mt19937_64 rng(4);
  auto D = KernelMatrix::from_rows(testutil::random_psd(20, rng));
  const auto g = testutil::random_vector(20, rng, 0, 1);
  EXPECT_EQ(fixed_score_dpp_select(D, g, opts(1.0, 8)), fixed_score_dpp_select(D, g, opts(1.0, 8)));
}

TEST(FixedScoreDpp, SameAsBsDppWithContextFreeScorer) {
  std::mt19937_64 rng(5);
  auto D = KernelMatrix::from_rows(testutil::random_psd(15, rng));
  const auto g = testutil::random_vector(15, rng, 0, 1);
  FixedScorer s(g);
  EXPECT_EQ(bs_dpp_select(D, s, opts(0.7, 6)), fixed_score_dpp_select(D, g, opts(0.7, 6)));
}

TEST(FixedScoreDpp, GreedyCloseToExhaustiveOptimum) {
  std::mt19937_64 rng(6);
  int close = 0, total = 0;
  for (int t = 0; t < 60; ++t) {
    auto D = KernelMatrix::from_rows(testutil::random_psd(10, rng, 0.3));
    const auto g = testutil::random_vector(10, rng, 0, 1);
    auto best = exhaustive_map(D, g, 1.0, 4);
    const auto picked = indices(fixed_score_dpp_select(D, g, opts(1.0, 4)));
    const double h = joint_objective(D, g, 1.0, picked);
    EXPECT_LE(h, best.objective + 1e-12);
    ++total;
    close += h >= best.objective - 0.1 * std::abs(best.objective);
  }
  EXPECT_GE(close, total * 9 / 10);
}

TEST(Exhaustive, FullSetAndAlphaZero) {
  std::mt19937_64 rng(7);
  auto D = KernelMatrix::from_rows(testutil::random_psd(6, rng));
  const auto g = testutil::random_vector(6, rng, 0, 1);
  std::vector<std::size_t> all{0, 1, 2, 3, 4, 5};
  auto full = exhaustive_map(D, g, 0.5, 6);
  EXPECT_EQ(full.subset, all);
  double sum = 0.0;
  for (double x : g) sum += x;
  EXPECT_NEAR(full.objective, sum + 0.5 * naive_log_det(D, all), 1e-10);

  auto top = exhaustive_map(D, g, 0.0, 3);
  std::vector<std::size_t> order(all);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return g[a] > g[b]; });
  order.resize(3);
  std::sort(order.begin(), order.end());
  EXPECT_EQ(top.subset, order);
}

TEST(Exhaustive, GuardsAndLogDet) {
  KernelMatrix big(17);
  std::vector<double> g(17, 0.5);
  EXPECT_THROW(exhaustive_map(big, g, 1.0, 2), ValidationError);
  EXPECT_NEAR(log_det({4, 2, 2, 3}, 2), std::log(8.0), 1e-15);
  EXPECT_EQ(log_det({1, 2, 2, 4}, 2), -std::numeric_limits<double>::infinity());
  EXPECT_EQ(log_det({0, 1, 1, 0}, 2), -std::numeric_limits<double>::infinity());
}

TEST(Mmr, LambdaOneIsTopK) {
  std::vector<double> g{0.2, 0.9, 0.5, 0.7};
  auto sim = [](std::size_t, std::size_t) { return 1.0; };
  EXPECT_EQ(mmr_select(g, sim, 1.0, 3), (std::vector<std::size_t>{1, 3, 2}));
}

TEST(Mmr, LambdaZeroAvoidsDuplicate) {
  std::vector<double> g{0.9, 0.9, 0.5};
  auto sim = [](std::size_t i, std::size_t j) { return (i < 2 && j < 2) ? 1.0 : 0.0; };
  EXPECT_EQ(mmr_select(g, sim, 0.0, 2), (std::vector<std::size_t>{0, 2}));
}

TEST(Mmr, MatchesStepByStepOracle) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 8;
    const auto g = testutil::random_vector(n, rng, 0, 1);
    auto S = testutil::random_psd(n, rng);
    auto sim = [&](std::size_t i, std::size_t j) { return S[i][j]; };
    const double lambda = 0.1 * (t % 11);
    std::vector<std::size_t> want;
    for (std::size_t step = 0; step < 5; ++step) {
      std::size_t best = n;
      double best_val = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (std::find(want.begin(), want.end(), i) != want.end()) continue;
        double pen = 0.0;
        for (std::size_t k = 0; k < want.size(); ++k) pen = k == 0 ? S[i][want[k]] : std::max(pen, S[i][want[k]]);
        const double v = lambda * g[i] - (1 - lambda) * pen;
        if (best == n || v > best_val) best = i, best_val = v;
      }
      want.push_back(best);
    }
    EXPECT_EQ(mmr_select(g, sim, lambda, 5), want);
  }
}

TEST(Mmr, BadLambdaOrK) {
  std::vector<double> g{0.5};
  auto sim = [](std::size_t, std::size_t) { return 0.0; };
  EXPECT_THROW(mmr_select(g, sim, 1.5, 1), ValidationError);
  EXPECT_THROW(mmr_select(g, sim, 0.5, 2), ValidationError);
}

TEST(CaeContextScorer, MatchesDirectScoreWithRunningContext) {
  std::mt19937_64 rng(9);
  const std::size_t d = 4;
  CandidateSet cs{"u", 0, {}};
  for (int i = 0; i < 6; ++i) cs.items.push_back({"c" + std::to_string(i), testutil::random_vector(d, rng), {}, 0.5});
  auto params = CaeParams::random(d, 2, 5, rng);
  InterestProfile prof{"u", testutil::random_vector(d, rng), testutil::random_vector(d, rng)};
  CaeContextScorer s(cs, prof, params);
  auto ctx = initial_context(cs);
  for (std::size_t pick : {3u, 0u, 5u}) {
    for (std::size_t i = 0; i < cs.size(); ++i) EXPECT_NEAR(s.score(i), score(prof, cs.items[i], ctx, params), 1e-13);
    s.observe(pick);
    ctx = update_context(ctx, cs.items[pick].embedding);
  }
}
