#pragma once

// Ranking-quality and diversity metrics.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "divrank/data_model.hpp"

namespace divrank {

/// Binary relevance of a ranked list. `total_relevant` counts relevant items
/// in the whole ground-truth set and may exceed the hits in the list; it
/// defaults to the hits in the list when left at zero.
struct LabeledRanking {
  std::vector<int> labels;
  std::size_t total_relevant = 0;

  std::size_t relevant() const {
    const auto in_list = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    return std::max(total_relevant, in_list);
  }
};

/// Gain 2^rel - 1, discount log2(pos + 1); zero when nothing is relevant.
inline double ndcg_at_k(const LabeledRanking& r, std::size_t k) {
  if (k == 0) throw ValidationError("ndcg_at_k: k must be positive");
  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, r.labels.size()); ++i)
    if (r.labels[i]) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  double idcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, r.relevant()); ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

/// Sum of precision at each hit in the top k over min(k, relevant count).
inline double map_at_k(const LabeledRanking& r, std::size_t k) {
  if (k == 0) throw ValidationError("map_at_k: k must be positive");
  const std::size_t rel = r.relevant();
  if (rel == 0) return 0.0;
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(k, r.labels.size()); ++i) {
    if (r.labels[i]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(std::min(k, rel));
}

/// Mann-Whitney rank statistic with average ranks for ties.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("auc: size mismatch");
  std::size_t pos = 0;
  for (int l : labels) pos += l == 1;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw ValidationError("auc: need at least one positive and one negative");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) rank_sum += avg_rank;
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

inline double logloss(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("logloss: size mismatch");
  if (scores.empty()) throw ValidationError("logloss: empty input");
  constexpr double lo = 1e-15, hi = 1.0 - 1e-15;
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double p = std::clamp(scores[i], lo, hi);
    sum += labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return -sum / static_cast<double>(scores.size());
}

/// Mean cosine distance over unordered pairs.
inline double ilad(std::span<const Vector> list) {
  if (list.size() < 2) throw ValidationError("ilad: need at least two items");
  std::vector<double> norms;
  for (const auto& v : list) {
    double s = 0.0;
    for (double x : v) s += x * x;
    if (s == 0.0) throw ValidationError("ilad: zero-norm embedding");
    norms.push_back(std::sqrt(s));
  }
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < list.size(); ++i)
    for (std::size_t j = i + 1; j < list.size(); ++j) {
      if (list[i].size() != list[j].size()) throw ValidationError("ilad: dimension mismatch");
      double dot = 0.0;
      for (std::size_t k = 0; k < list[i].size(); ++k) dot += list[i][k] * list[j][k];
      total += 1.0 - dot / (norms[i] * norms[j]);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("spearman: need two equal-length series");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
      for (std::size_t t = i; t < j; ++t) r[order[t]] = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0;
      i = j;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace divrank
