#pragma once

// Greedy MAP selection for the joint objective
//   h(S) = sum_{i in S} g(i|S) + alpha * log det(D_S)
// with incremental Cholesky residuals, plus the MMR baseline and an
// exhaustive oracle for small instances.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "divrank/accuracy_model.hpp"
#include "divrank/data_model.hpp"
#include "divrank/diversity_kernel.hpp"

namespace divrank {

/// A scorer returns g(i | S) for candidate index i and is told about every
/// selection so it can refresh its context.
template <typename S>
concept ContextScorer = requires(S s, std::size_t i) {
  { s.score(i) } -> std::convertible_to<double>;
  s.observe(i);
};

/// Context-insensitive scores.
class FixedScorer {
 public:
  explicit FixedScorer(std::span<const double> scores) : scores_(scores.begin(), scores.end()) {}
  double score(std::size_t i) const { return scores_[i]; }
  void observe(std::size_t) {}

 private:
  std::vector<double> scores_;
};

/// Context-aware scores from the accuracy model; the context is refreshed
/// with the running mean of selected items after every pick.
class CaeContextScorer {
 public:
  CaeContextScorer(const CandidateSet& candidates, const InterestProfile& profile, const CaeParams& params)
      : candidates_(candidates), scorer_(params, profile), ctx_(initial_context(candidates)) {
    scorer_.set_context(ctx_);
  }
  double score(std::size_t i) const { return scorer_.score(candidates_.items[i].embedding); }
  void observe(std::size_t i) {
    ctx_ = update_context(std::move(ctx_), candidates_.items[i].embedding);
    scorer_.set_context(ctx_);
  }
  const ContextState& context() const { return ctx_; }

 private:
  const CandidateSet& candidates_;
  CaeScorer scorer_;
  ContextState ctx_;
};

struct SelectionOptions {
  double alpha = 1.0;
  std::size_t K = 10;
  double epsilon = 1e-9;
  // Seed with argmax log D_ii alone instead of the joint objective.
  bool paper_literal_init = false;
};

/// Greedy state after t selections: each remaining candidate i carries the
/// row c_i (length t) of the incremental Cholesky factor and its residual
/// d_i^2 = D_ii - |c_i|^2, clamped at zero.
struct CholeskySelectionState {
  std::size_t n = 0;
  std::size_t capacity = 0;
  std::vector<std::size_t> selected;
  std::vector<double> c;   // n x capacity, row-major; row i holds c_i
  std::vector<double> d2;  // residuals
  std::vector<char> taken;

  std::size_t steps() const { return selected.size(); }
  std::span<const double> row(std::size_t i) const { return {c.data() + i * capacity, selected.size()}; }
};

/// Called after each selection, once residuals reflect the new set.
using SelectionObserver = std::function<void(const CholeskySelectionState&)>;

namespace detail {

inline double log_residual(double d2, double eps) {
  return d2 > eps ? std::log(d2) : -std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Greedy MAP for the joint objective. At each step picks the remaining
/// candidate maximizing g(i|S) + alpha * log d_i^2 (lowest index on ties),
/// then updates e_i = (D_ji - <c_j, c_i>) / d_j, c_i <- [c_i, e_i],
/// d_i^2 <- d_i^2 - e_i^2 for the rest, and lets the scorer see the pick.
/// With alpha > 0, candidates with d_i^2 <= epsilon are never chosen and the
/// list ends early once none remain. With alpha = 0 the log-det term is
/// absent and selection is by score alone.
template <ContextScorer Scorer>
RerankResult bs_dpp_select(const KernelMatrix& D, Scorer& scorer, const SelectionOptions& opt,
                           std::span<const std::string> ids = {}, const SelectionObserver& observer = {}) {
  const std::size_t n = D.size();
  if (opt.K < 1) throw ValidationError("selection: K must be at least 1");
  if (opt.K > n) throw ValidationError("selection: K=" + std::to_string(opt.K) + " exceeds N=" + std::to_string(n));
  if (!ids.empty() && ids.size() != n) throw ValidationError("selection: id count does not match kernel size");
  const bool diverse = opt.alpha > 0.0;

  CholeskySelectionState st;
  st.n = n;
  st.capacity = opt.K;
  st.c.assign(n * opt.K, 0.0);
  st.d2.resize(n);
  st.taken.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) st.d2[i] = std::max(D(i, i), 0.0);

  RerankResult result;
  std::vector<double> g(n, 0.0);
  const double neg_inf = -std::numeric_limits<double>::infinity();

  // Ascending, so the first maximum found is the lowest index.
  std::vector<std::size_t> remaining(n);
  std::iota(remaining.begin(), remaining.end(), 0);
  // log x <= log m + x / m - 1 with m = D_ii bounds log d_i^2 without a log
  // call; candidates whose bound already loses are skipped.
  std::vector<double> bound_offset(n, neg_inf), inv_diag(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (st.d2[i] > 0.0) {
      bound_offset[i] = std::log(st.d2[i]) - 1.0;
      inv_diag[i] = 1.0 / st.d2[i];
    }

  // Running argmax of one scan.
  struct Best {
    std::optional<std::size_t> index;
    double value = -std::numeric_limits<double>::infinity();
    double cutoff = -std::numeric_limits<double>::infinity();  // value less a rounding margin
  };

  auto consider = [&](Best& best, std::size_t i, bool literal_seed) {
    const double d2 = st.d2[i];
    if (diverse && !(d2 > opt.epsilon)) return;
    const double gi = scorer.score(i);
    double val = gi;
    if (literal_seed) {
      val = std::log(d2);
    } else if (diverse) {
      if (gi + opt.alpha * (bound_offset[i] + d2 * inv_diag[i]) < best.cutoff) return;
      val += opt.alpha * std::log(d2);
    }
    g[i] = gi;
    if (!best.index || val > best.value) {
      best.index = i;
      best.value = val;
      best.cutoff = val - 1e-12 * (1.0 + std::abs(val));
    }
  };

  auto record = [&](std::size_t j) {
    const double log_d2 = detail::log_residual(st.d2[j], opt.epsilon);
    const double div = diverse ? opt.alpha * log_d2 : 0.0;
    result.steps.push_back({ids.empty() ? std::to_string(j) : ids[j], g[j], log_d2, g[j] + div});
    result.item_ids.push_back(result.steps.back().item_id);
    result.objective += g[j] + div;
    st.selected.push_back(j);
    st.taken[j] = 1;
    remaining.erase(std::find(remaining.begin(), remaining.end(), j));
  };

  // Folds the new pick j into every remaining row and, when `next` is given,
  // scans the updated residuals for the following pick in the same pass.
  auto update = [&](std::size_t j, Best* next) {
    const std::size_t t = st.selected.size() - 1;  // column for the new entry
    const double dj2 = st.d2[j];
    const bool live = dj2 > opt.epsilon;
    const double inv_dj = live ? 1.0 / std::sqrt(dj2) : 0.0;
    const double* cj = st.c.data() + j * st.capacity;
    const auto Dj = D.row(j);
    for (std::size_t i : remaining) {
      double* ci = st.c.data() + i * st.capacity;
      double e = 0.0;
      if (live) {
        double inner = 0.0;
        for (std::size_t k = 0; k < t; ++k) inner += cj[k] * ci[k];
        e = (Dj[i] - inner) * inv_dj;
      }
      ci[t] = e;
      st.d2[i] = std::max(st.d2[i] - e * e, 0.0);
      if (next) consider(*next, i, false);
    }
  };

  Best first;
  for (std::size_t i : remaining) consider(first, i, opt.paper_literal_init && diverse);
  if (!first.index) {
    result.short_list = true;
    return result;
  }
  std::size_t j = *first.index;
  while (true) {
    record(j);
    scorer.observe(j);
    const bool more = st.selected.size() < opt.K;
    Best next;
    update(j, more ? &next : nullptr);
    if (observer) observer(st);
    if (!more) break;
    if (!next.index) {
      result.short_list = true;
      break;
    }
    j = *next.index;
  }
  return result;
}

/// Standard DPP baseline: the same greedy with scores frozen.
inline RerankResult fixed_score_dpp_select(const KernelMatrix& D, std::span<const double> scores,
                                           const SelectionOptions& opt, std::span<const std::string> ids = {}) {
  if (scores.size() != D.size()) throw ValidationError("fixed_score_dpp_select: score count mismatch");
  FixedScorer scorer(scores);
  return bs_dpp_select(D, scorer, opt, ids);
}

/// log det via LU with partial pivoting; -inf when the matrix is singular
/// or its determinant is not positive.
inline double log_det(std::vector<double> a, std::size_t n) {
  double log_abs = 0.0;
  int sign = 1;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    const double p = a[piv * n + col];
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (piv != col) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a[piv * n + k], a[col * n + k]);
      sign = -sign;
    }
    if (p < 0) sign = -sign;
    log_abs += std::log(std::abs(p));
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / p;
      if (f == 0.0) continue;
      for (std::size_t k = col; k < n; ++k) a[r * n + k] -= f * a[col * n + k];
    }
  }
  return sign > 0 ? log_abs : -std::numeric_limits<double>::infinity();
}

inline double log_det_subset(const KernelMatrix& D, std::span<const std::size_t> subset) {
  const std::size_t k = subset.size();
  if (k == 0) return 0.0;
  std::vector<double> a(k * k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) a[i * k + j] = D(subset[i], subset[j]);
  return log_det(std::move(a), k);
}

/// h(S) = sum g + alpha * log det D_S, evaluated directly. With alpha = 0 the
/// determinant term is dropped.
inline double joint_objective(const KernelMatrix& D, std::span<const double> g, double alpha,
                              std::span<const std::size_t> subset) {
  double h = 0.0;
  for (std::size_t i : subset) h += g[i];
  if (alpha > 0.0) h += alpha * log_det_subset(D, subset);
  return h;
}

struct ExhaustiveResult {
  std::vector<std::size_t> subset;  // ascending indices
  double objective = -std::numeric_limits<double>::infinity();
};

inline constexpr std::size_t kExhaustiveMaxN = 16;

/// Global maximizer over all K-subsets, first in lexicographic order on ties.
inline ExhaustiveResult exhaustive_map(const KernelMatrix& D, std::span<const double> g, double alpha, std::size_t K) {
  const std::size_t n = D.size();
  if (n > kExhaustiveMaxN) throw ValidationError("exhaustive_map: N=" + std::to_string(n) + " exceeds 16");
  if (K < 1 || K > n) throw ValidationError("exhaustive_map: K out of range");
  if (g.size() != n) throw ValidationError("exhaustive_map: score count mismatch");
  ExhaustiveResult best;
  std::vector<std::size_t> idx(K);
  std::iota(idx.begin(), idx.end(), 0);
  while (true) {
    const double h = joint_objective(D, g, alpha, idx);
    if (best.subset.empty() || h > best.objective) {
      best.subset = idx;
      best.objective = h;
    }
    // Next combination in lexicographic order.
    std::size_t pos = K;
    while (pos > 0 && idx[pos - 1] == n - K + pos - 1) --pos;
    if (pos == 0) break;
    ++idx[pos - 1];
    for (std::size_t k = pos; k < K; ++k) idx[k] = idx[k - 1] + 1;
  }
  return best;
}

/// Maximal marginal relevance: argmax lambda*g(i) - (1-lambda)*max_{j in S} sim(i,j).
inline std::vector<std::size_t> mmr_select(std::span<const double> g,
                                           const std::function<double(std::size_t, std::size_t)>& sim, double lambda,
                                           std::size_t K) {
  const std::size_t n = g.size();
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("mmr_select: lambda must lie in [0,1]");
  if (K > n) throw ValidationError("mmr_select: K exceeds N");
  std::vector<std::size_t> out;
  std::vector<char> taken(n, 0);
  std::vector<double> max_sim(n, 0.0);
  while (out.size() < K) {
    std::size_t best = n;
    double best_val = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double val = lambda * g[i] - (1.0 - lambda) * (out.empty() ? 0.0 : max_sim[i]);
      if (best == n || val > best_val) {
        best = i;
        best_val = val;
      }
    }
    taken[best] = 1;
    out.push_back(best);
    for (std::size_t i = 0; i < n; ++i)
      if (!taken[i]) max_sim[i] = out.size() == 1 ? sim(i, best) : std::max(max_sim[i], sim(i, best));
  }
  return out;
}

/// Cosine similarity between candidate embeddings.
inline std::function<double(std::size_t, std::size_t)> cosine_similarity(const CandidateSet& c) {
  std::vector<Vector> unit;
  for (const auto& it : c.items) unit.push_back(l2_normalized(it.embedding));
  return [unit = std::move(unit)](std::size_t i, std::size_t j) { return dot(unit[i], unit[j]); };
}

}  // namespace divrank
