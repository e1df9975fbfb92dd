#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "divrank/interest.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace divrank;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const ad::Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  return m;
}

/// Plain loops: per head softmax(scale * Q K^T) V, concat, W^O, mean over positions.
Vector attention_oracle(const Mat& x, const AttentionParams& p) {
  const std::size_t n = x.size(), din = x[0].size(), dh = p.head_dim(), H = p.heads();
  Mat concat(n, std::vector<double>(H * dh, 0.0));
  for (std::size_t h = 0; h < H; ++h) {
    const Mat wq = to_mat(p.wq[h]), wk = to_mat(p.wk[h]), wv = to_mat(p.wv[h]);
    Mat q(n, Vector(dh, 0.0)), k(n, Vector(dh, 0.0)), v(n, Vector(dh, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < dh; ++c)
        for (std::size_t r = 0; r < din; ++r) {
          q[i][c] += x[i][r] * wq[r][c];
          k[i][c] += x[i][r] * wk[r][c];
          v[i][c] += x[i][r] * wv[r][c];
        }
    for (std::size_t i = 0; i < n; ++i) {
      Vector s(n, 0.0);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t c = 0; c < dh; ++c) s[j] += q[i][c] * k[j][c];
        s[j] *= p.scale;
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < dh; ++c) concat[i][h * dh + c] += s[j] / z * v[j][c];
    }
  }
  const Mat wo = to_mat(p.wo);
  Vector out(p.output_dim(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < out.size(); ++c)
      for (std::size_t r = 0; r < H * dh; ++r) out[c] += concat[i][r] * wo[r][c] / static_cast<double>(n);
  return out;
}

ad::Tensor identity(std::size_t n) {
  ad::Tensor t(n, n, true);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

AttentionParams identity_params(std::size_t d) {
  AttentionParams p;
  p.wq = {identity(d)};
  p.wk = {identity(d)};
  p.wv = {identity(d)};
  p.wo = identity(d);
  p.scale = 1.0 / std::sqrt(static_cast<double>(d));
  return p;
}

void expect_vec_near(const Vector& a, const Vector& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

EmbeddingTable table_of(const std::vector<std::pair<std::string, Vector>>& items) {
  EmbeddingTable t;
  for (const auto& [id, e] : items) t.insert({id, e, {}, {}});
  return t;
}

}  // namespace

TEST(GroupInterestPoints, SumPoolsMembersOfOneCluster) {
  auto table = table_of({{"i1", {1, 0}}, {"i2", {5, 5}}, {"i3", {0, 1}}});
  std::map<std::string, std::int64_t> clusters{{"i1", 0}, {"i2", 1}, {"i3", 0}};
  std::vector<BehaviorEvent> ev{{"u", "i1", 1, {}}, {"u", "i2", 2, {}}, {"u", "i3", 3, {}}};
  auto pts = group_interest_points(ev, clusters, table, 5);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].cluster_id, 0);
  EXPECT_EQ(pts[0].pooled, (Vector{1, 1}));
  EXPECT_EQ(pts[0].members, (std::vector<std::string>{"i1", "i3"}));
}

TEST(GroupInterestPoints, SingleItemIsItsEmbedding) {
  auto table = table_of({{"a", {0.25, -2}}});
  std::vector<BehaviorEvent> ev{{"u", "a", 0, {}}};
  auto pts = group_interest_points(ev, {{"a", 9}}, table, 5);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0].pooled, (Vector{0.25, -2}));
}

TEST(GroupInterestPoints, TopFiveOfSixDropsSmallest) {
  std::vector<std::pair<std::string, Vector>> items;
  std::map<std::string, std::int64_t> clusters;
  std::vector<BehaviorEvent> ev;
  // cluster c gets c+1 behaviors, so cluster 0 is the smallest
  for (int c = 0; c < 6; ++c)
    for (int k = 0; k <= c; ++k) {
      const std::string id = "c" + std::to_string(c) + "_" + std::to_string(k);
      items.push_back({id, {1.0 * c, 1.0}});
      clusters[id] = c;
      ev.push_back({"u", id, 10 * c + k, {}});
    }
  auto pts = group_interest_points(ev, clusters, table_of(items), 5);
  ASSERT_EQ(pts.size(), 5u);
  for (const auto& p : pts) EXPECT_NE(p.cluster_id, 0);
  EXPECT_EQ(pts[0].cluster_id, 5);
}

TEST(GroupInterestPoints, TiesGoToMostRecent) {
  auto table = table_of({{"a", {1}}, {"b", {2}}, {"c", {3}}});
  std::map<std::string, std::int64_t> clusters{{"a", 0}, {"b", 1}, {"c", 2}};
  std::vector<BehaviorEvent> ev{{"u", "a", 5, {}}, {"u", "b", 9, {}}, {"u", "c", 7, {}}};
  auto pts = group_interest_points(ev, clusters, table, 2);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].cluster_id, 1);
  EXPECT_EQ(pts[1].cluster_id, 2);
}

TEST(GroupInterestPoints, EmptyHistoryGivesNoPoints) {
  EmbeddingTable table;
  EXPECT_TRUE(group_interest_points({}, {}, table, 5).empty());
}

TEST(GroupInterestPoints, MemberCountsMatchSurvivingBehaviors) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> pick(0, 19);
  std::vector<std::pair<std::string, Vector>> items;
  std::map<std::string, std::int64_t> clusters;
  for (int i = 0; i < 20; ++i) {
    items.push_back({"i" + std::to_string(i), testutil::random_vector(3, rng)});
    clusters["i" + std::to_string(i)] = i % 7;
  }
  auto table = table_of(items);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<BehaviorEvent> ev;
    for (int k = 0; k < 25; ++k) ev.push_back({"u", "i" + std::to_string(pick(rng)), k, {}});
    const std::size_t M = 1 + trial % 6;
    auto pts = group_interest_points(ev, clusters, table, M);
    EXPECT_LE(pts.size(), M);
    std::size_t members = 0, surviving = 0;
    for (const auto& p : pts) {
      members += p.members.size();
      Vector sum(3, 0.0);
      for (const auto& id : p.members) {
        EXPECT_EQ(clusters.at(id), p.cluster_id);
        for (std::size_t c = 0; c < 3; ++c) sum[c] += table.at(id).embedding[c];
      }
      expect_vec_near(p.pooled, sum, 1e-12);
    }
    for (const auto& e : ev)
      for (const auto& p : pts) surviving += clusters.at(e.item_id) == p.cluster_id;
    EXPECT_EQ(members, surviving);
  }
}

TEST(GroupInterestPoints, UnclusteredItemIsError) {
  auto table = table_of({{"a", {1}}});
  std::vector<BehaviorEvent> ev{{"u", "a", 0, {}}};
  EXPECT_THROW(group_interest_points(ev, {}, table, 5), ValidationError);
}

TEST(Attention, SingleInputIdentityWeightsReturnsInput) {
  auto p = identity_params(3);
  auto out = multi_head_attention(ad::Tensor::from_rows({{0.3, -1.2, 2.0}}), p);
  expect_vec_near(out.to_vector(), {0.3, -1.2, 2.0}, 1e-15);
}

TEST(Attention, TwoIdenticalInputsReturnThatVector) {
  std::mt19937_64 rng(8);
  auto p = AttentionParams::random(4, 4, 2, 2, rng);
  const Vector x = testutil::random_vector(4, rng);
  auto one = multi_head_attention(ad::Tensor::from_rows({x}), p).to_vector();
  auto two = multi_head_attention(ad::Tensor::from_rows({x, x}), p).to_vector();
  expect_vec_near(two, one, 1e-12);
  auto id = identity_params(4);
  expect_vec_near(multi_head_attention(ad::Tensor::from_rows({x, x}), id).to_vector(), x, 1e-12);
}

TEST(Attention, MatchesScalarLoopOracle) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 10; ++t) {
    const std::size_t heads = 1 + t % 3;
    auto p = AttentionParams::random(5, 4, heads, 3, rng);
    Mat x{testutil::random_vector(5, rng), testutil::random_vector(5, rng), testutil::random_vector(5, rng)};
    auto got = multi_head_attention(ad::Tensor::from_rows(x), p).to_vector();
    expect_vec_near(got, attention_oracle(x, p), 1e-12);
  }
}

TEST(Attention, DimensionMismatchIsError) {
  std::mt19937_64 rng(1);
  auto p = AttentionParams::random(4, 4, 2, 2, rng);
  EXPECT_THROW(multi_head_attention(ad::Tensor::from_rows({{1, 2, 3}}), p), ValidationError);
  EXPECT_THROW(multi_head_attention(ad::Tensor(0, 4), p), ValidationError);
}

TEST(Attention, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    auto s = ad::softmax_rows(ad::scale(ad::Tensor::from_rows(testutil::random_matrix(4, 6, rng)), 20.0));
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 6; ++c) sum += s(r, c);
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(MacroInterest, ZeroPointsGiveZeroVector) {
  std::mt19937_64 rng(2);
  auto p = AttentionParams::random(4, 4, 2, 2, rng);
  EXPECT_EQ(macro_interest({}, p).to_vector(), Vector(4, 0.0));
}

TEST(MacroInterest, OnePointIdentityIsThePoint) {
  InterestPoint pt{3, {"a", "b"}, {1.5, -0.5}, 0};
  expect_vec_near(macro_interest(std::vector<InterestPoint>{pt}, identity_params(2)).to_vector(), pt.pooled, 1e-15);
}

TEST(MacroInterest, ThreeRandomPointsMatchOracle) {
  std::mt19937_64 rng(33);
  auto p = AttentionParams::random(4, 4, 2, 2, rng);
  std::vector<InterestPoint> pts;
  Mat x;
  for (int k = 0; k < 3; ++k) {
    pts.push_back({k, {"x"}, testutil::random_vector(4, rng), 0});
    x.push_back(pts.back().pooled);
  }
  expect_vec_near(macro_interest(pts, p).to_vector(), attention_oracle(x, p), 1e-12);
}

TEST(MacroInterest, PermutationInvariant) {
  std::mt19937_64 rng(12);
  auto p = AttentionParams::random(6, 6, 2, 3, rng);
  std::vector<InterestPoint> pts;
  for (int k = 0; k < 5; ++k) pts.push_back({k, {"x"}, testutil::random_vector(6, rng), 0});
  const Vector ref = macro_interest(pts, p).to_vector();
  for (int t = 0; t < 20; ++t) {
    std::shuffle(pts.begin(), pts.end(), rng);
    expect_vec_near(macro_interest(pts, p).to_vector(), ref, 1e-12);
  }
}

TEST(TimeBucket, LogScaledAndCapped) {
  EXPECT_EQ(time_bucket(0, 8), 0u);
  EXPECT_EQ(time_bucket(3599, 8), 0u);
  EXPECT_EQ(time_bucket(3600, 8), 1u);
  EXPECT_EQ(time_bucket(3 * 3600, 8), 2u);
  EXPECT_EQ(time_bucket(7 * 3600, 8), 3u);
  EXPECT_EQ(time_bucket(1000000000, 8), 7u);
  EXPECT_THROW(time_bucket(-1, 8), ValidationError);
}

TEST(MicroInterest, ZeroTimeEmbeddingsReduceToPlainAttention) {
  std::mt19937_64 rng(44);
  auto p = MieParams::random(4, 2, 6, 3, rng);
  for (double& v : p.time_embedding.data()) v = 0.0;
  std::vector<RecentItem> recent;
  Mat x;
  for (int k = 0; k < 3; ++k) {
    recent.push_back({testutil::random_vector(4, rng), 1000 - 300 * k});
    auto row = recent.back().embedding;
    row.resize(7, 0.0);
    x.push_back(row);
  }
  expect_vec_near(micro_interest(recent, 1000, p).to_vector(), attention_oracle(x, p.micro), 1e-12);
}

TEST(MicroInterest, FourRecentItemsMatchOracle) {
  std::mt19937_64 rng(45);
  auto p = MieParams::random(4, 2, 6, 3, rng);
  const std::int64_t now = 100000;
  const std::vector<std::int64_t> ts{now, now - 3600, now - 4 * 3600, now - 90000};
  std::vector<RecentItem> recent;
  Mat x;
  for (auto t : ts) {
    recent.push_back({testutil::random_vector(4, rng), t});
    auto row = recent.back().embedding;
    // bucket = floor(log2(1 + dt/3600)) capped at 5
    const double dt = static_cast<double>(now - t) / 3600.0;
    const std::size_t b = std::min<std::size_t>(5, static_cast<std::size_t>(std::floor(std::log2(1.0 + dt))));
    for (std::size_t c = 0; c < 3; ++c) row.push_back(p.time_embedding(b, c));
    x.push_back(row);
  }
  expect_vec_near(micro_interest(recent, now, p).to_vector(), attention_oracle(x, p.micro), 1e-12);
}

TEST(MicroInterest, FutureEventIsError) {
  std::mt19937_64 rng(46);
  auto p = MieParams::random(2, 1, 4, 2, rng);
  std::vector<RecentItem> recent{{{1, 0}, 50}};
  EXPECT_THROW(micro_interest(recent, 49, p), ValidationError);
  EXPECT_EQ(micro_interest({}, 49, p).to_vector(), Vector(2, 0.0));
}

TEST(BuildInterestInputs, RecentWindowMostRecentFirst) {
  auto table = table_of({{"a", {1}}, {"b", {2}}, {"c", {3}}});
  std::map<std::string, std::int64_t> clusters{{"a", 0}, {"b", 0}, {"c", 1}};
  std::vector<BehaviorEvent> ev{{"u", "a", 1, {}}, {"u", "b", 2, {}}, {"u", "c", 3, {}}};
  auto in = build_interest_inputs("u", ev, clusters, table, 5, 2, 10);
  EXPECT_EQ(in.recent_ids, (std::vector<std::string>{"c", "b"}));
  EXPECT_EQ(in.points.size(), 2u);
}

TEST(InterestGradients, MacroAndMicroPassFiniteDifferences) {
  std::mt19937_64 rng(77);
  auto p = MieParams::random(4, 2, 5, 2, rng);
  std::vector<InterestPoint> pts;
  for (int k = 0; k < 3; ++k) pts.push_back({k, {"x"}, testutil::random_vector(4, rng), 0});
  std::vector<RecentItem> recent;
  for (int k = 0; k < 4; ++k) recent.push_back({testutil::random_vector(4, rng), 50000 - 9000 * k});
  const Vector w = testutil::random_vector(4, rng);
  auto loss = [&] {
    auto h = ad::add(macro_interest(pts, p.macro), micro_interest(recent, 50000, p));
    return ad::sum_all(ad::mul(h, ad::mul(h, ad::Tensor::row_vector(w))));
  };
  auto r = testutil::grad_check(p.parameters(), loss);
  EXPECT_TRUE(r.ok) << r.detail;
  EXPECT_GT(r.checked, 50u);
}

TEST(Profiles, CacheFileRoundTrip) {
  testutil::TempDir tmp;
  InterestProfile a{"u1", {0.5, -1}, {2, 0.125}};
  testutil::write_file(tmp.file("p.jsonl"), to_json(a).dump() + "\n");
  EXPECT_EQ(load_profiles(tmp.file("p.jsonl")).at("u1"), a);
  testutil::write_file(tmp.file("bad.jsonl"), R"({"user_id":"u","h_macro":[1],"h_micro":[1,2]})" "\n");
  EXPECT_THROW(load_profiles(tmp.file("bad.jsonl")), ValidationError);
}
