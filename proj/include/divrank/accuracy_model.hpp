#pragma once

// Context-aware accuracy estimation: excitation gates driven by the
// previously selected items and by the candidate pool modulate the target
// item and the user's interest vectors; an MLP with a two-logit softmax
// head turns the concatenation into a click probability.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "divrank/data_model.hpp"
#include "divrank/interest.hpp"
#include "divrank/metrics.hpp"
#include "divrank/tensor.hpp"

namespace divrank {

struct CaeParams {
  ad::Tensor w1_prev, w2_prev;  // d x d/r, d/r x d
  ad::Tensor w1_cand, w2_cand;
  ad::Tensor mlp_w1, mlp_b1;  // 7d x hidden, 1 x hidden
  ad::Tensor mlp_w2, mlp_b2;  // hidden x 2, 1 x 2

  std::size_t dim() const { return w1_prev.rows(); }
  std::size_t hidden() const { return mlp_w1.cols(); }

  static CaeParams random(std::size_t d, std::size_t reduction, std::size_t hidden, std::mt19937_64& rng) {
    const std::size_t squeezed = std::max<std::size_t>(1, d / std::max<std::size_t>(1, reduction));
    CaeParams p;
    p.w1_prev = ad::Tensor::parameter(d, squeezed, rng);
    p.w2_prev = ad::Tensor::parameter(squeezed, d, rng);
    p.w1_cand = ad::Tensor::parameter(d, squeezed, rng);
    p.w2_cand = ad::Tensor::parameter(squeezed, d, rng);
    p.mlp_w1 = ad::Tensor::parameter(7 * d, hidden, rng);
    p.mlp_b1 = ad::Tensor(1, hidden, true);
    p.mlp_w2 = ad::Tensor::parameter(hidden, 2, rng);
    p.mlp_b2 = ad::Tensor(1, 2, true);
    return p;
  }

  std::vector<ad::Tensor> parameters() const {
    return {w1_prev, w2_prev, w1_cand, w2_cand, mlp_w1, mlp_b1, mlp_w2, mlp_b2};
  }
};

/// sigma(relu(context W1) W2) applied elementwise to `target`.
inline ad::Tensor excite(const ad::Tensor& context, const ad::Tensor& target, const ad::Tensor& w1,
                         const ad::Tensor& w2) {
  auto gate = ad::sigmoid(ad::matmul(ad::relu(ad::matmul(context, w1)), w2));
  return ad::mul(gate, target);
}

struct ContextState {
  Vector prev_sum;
  Vector h_cand;
  std::size_t count = 0;

  Vector h_prev() const {
    Vector h(prev_sum.size(), 0.0);
    if (count == 0) return h;
    for (std::size_t k = 0; k < h.size(); ++k) h[k] = prev_sum[k] / static_cast<double>(count);
    return h;
  }
};

inline Vector mean_embedding(std::span<const ItemRecord> items, std::size_t d) {
  Vector sum(d, 0.0);
  for (const auto& it : items)
    for (std::size_t k = 0; k < d; ++k) sum[k] += it.embedding[k];
  if (!items.empty())
    for (double& v : sum) v /= static_cast<double>(items.size());
  return sum;
}

inline ContextState initial_context(const CandidateSet& candidates) {
  const std::size_t d = candidates.dim();
  return {Vector(d, 0.0), mean_embedding(candidates.items, d), 0};
}

inline ContextState update_context(ContextState ctx, const Vector& embedding) {
  if (embedding.size() != ctx.prev_sum.size()) throw ValidationError("update_context: dimension mismatch");
  for (std::size_t k = 0; k < embedding.size(); ++k) ctx.prev_sum[k] += embedding[k];
  ++ctx.count;
  return ctx;
}

/// Two logits (no-click, click) for one target item; differentiable.
inline ad::Tensor cae_logits(const ad::Tensor& item, const ad::Tensor& h_prev, const ad::Tensor& h_cand,
                             const ad::Tensor& h_macro, const ad::Tensor& h_micro, const CaeParams& p) {
  const std::size_t d = p.dim();
  for (const ad::Tensor* t : {&item, &h_prev, &h_cand, &h_macro, &h_micro}) {
    if (t->rows() != 1 || t->cols() != d)
      throw ValidationError("cae: expected 1x" + std::to_string(d) + " input, got " + t->shape_str());
  }
  auto all = ad::concat_cols({item, excite(h_prev, item, p.w1_prev, p.w2_prev),
                              excite(h_cand, item, p.w1_cand, p.w2_cand),
                              excite(h_prev, h_macro, p.w1_prev, p.w2_prev),
                              excite(h_prev, h_micro, p.w1_prev, p.w2_prev),
                              excite(h_cand, h_macro, p.w1_cand, p.w2_cand),
                              excite(h_cand, h_micro, p.w1_cand, p.w2_cand)});
  auto hidden = ad::relu(ad::add(ad::matmul(all, p.mlp_w1), p.mlp_b1));
  return ad::add(ad::matmul(hidden, p.mlp_w2), p.mlp_b2);
}

inline double click_probability(std::span<const double> logits) {
  return ad::sigmoid_scalar(logits[1] - logits[0]);
}

/// Context-aware score g(u,i|S) via the differentiable graph.
inline double score(const InterestProfile& user, const ItemRecord& target, const ContextState& ctx,
                    const CaeParams& params) {
  auto logits = cae_logits(ad::Tensor::row_vector(target.embedding), ad::Tensor::row_vector(ctx.h_prev()),
                           ad::Tensor::row_vector(ctx.h_cand), ad::Tensor::row_vector(user.h_macro),
                           ad::Tensor::row_vector(user.h_micro), params);
  return click_probability(logits.data());
}

/// Allocation-free scorer for inference. Gates and every target-independent
/// hidden contribution are cached per context, so scoring one item costs
/// three d x hidden products.
class CaeScorer {
 public:
  CaeScorer(const CaeParams& params, const InterestProfile& user) : p_(params), user_(user) {
    d_ = p_.dim();
    h_ = p_.hidden();
    if (user.h_macro.size() != d_ || user.h_micro.size() != d_)
      throw ValidationError("CaeScorer: profile dimension does not match parameters");
  }

  void set_context(const ContextState& ctx) {
    gate_prev_ = gate(ctx.h_prev(), p_.w1_prev, p_.w2_prev);
    gate_cand_ = gate(ctx.h_cand, p_.w1_cand, p_.w2_cand);
    const auto w = p_.mlp_w1.data();
    base_.assign(p_.mlp_b1.data().begin(), p_.mlp_b1.data().end());
    // Blocks 3..6 of the concatenation depend only on the context.
    const Vector* vecs[4] = {&user_.h_macro, &user_.h_micro, &user_.h_macro, &user_.h_micro};
    const Vector* gates[4] = {&gate_prev_, &gate_prev_, &gate_cand_, &gate_cand_};
    for (std::size_t b = 0; b < 4; ++b) {
      const std::size_t row0 = (3 + b) * d_;
      for (std::size_t k = 0; k < d_; ++k) {
        const double x = (*gates[b])[k] * (*vecs[b])[k];
        if (x == 0.0) continue;
        const double* wr = &w[(row0 + k) * h_];
        for (std::size_t j = 0; j < h_; ++j) base_[j] += x * wr[j];
      }
    }
  }

  double score(std::span<const double> e) const {
    const auto w = p_.mlp_w1.data();
    hidden_ = base_;
    for (std::size_t k = 0; k < d_; ++k) {
      const double x0 = e[k], x1 = gate_prev_[k] * e[k], x2 = gate_cand_[k] * e[k];
      const double* w0 = &w[k * h_];
      const double* w1 = &w[(d_ + k) * h_];
      const double* w2 = &w[(2 * d_ + k) * h_];
      for (std::size_t j = 0; j < h_; ++j) hidden_[j] += x0 * w0[j] + x1 * w1[j] + x2 * w2[j];
    }
    double l0 = p_.mlp_b2.data()[0], l1 = p_.mlp_b2.data()[1];
    const auto wo = p_.mlp_w2.data();
    for (std::size_t j = 0; j < h_; ++j) {
      const double a = hidden_[j] > 0.0 ? hidden_[j] : 0.0;
      l0 += a * wo[j * 2];
      l1 += a * wo[j * 2 + 1];
    }
    return ad::sigmoid_scalar(l1 - l0);
  }

 private:
  Vector gate(const Vector& ctx, const ad::Tensor& w1, const ad::Tensor& w2) const {
    const std::size_t r = w1.cols();
    Vector mid(r, 0.0), out(d_, 0.0);
    for (std::size_t k = 0; k < d_; ++k)
      for (std::size_t j = 0; j < r; ++j) mid[j] += ctx[k] * w1(k, j);
    for (double& v : mid) v = v > 0.0 ? v : 0.0;
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t k = 0; k < d_; ++k) out[k] += mid[j] * w2(j, k);
    for (double& v : out) v = ad::sigmoid_scalar(v);
    return out;
  }

  const CaeParams& p_;
  const InterestProfile& user_;
  std::size_t d_ = 0, h_ = 0;
  Vector gate_prev_, gate_cand_, base_;
  mutable Vector hidden_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainingSample {
  std::size_t user = 0;  // index into the per-user inputs
  Vector item;
  Vector h_prev;
  Vector h_cand;
  int label = 0;
};

/// Rebuilds page contexts from labeled impressions: a page is a run of one
/// user's events sharing a timestamp, in input order. h_prev is the mean of
/// the page items shown before the target, h_cand the mean of the page.
inline std::vector<TrainingSample> build_training_samples(std::span<const BehaviorEvent> events,
                                                          const EmbeddingTable& table,
                                                          const std::map<std::string, std::size_t>& user_index) {
  std::vector<TrainingSample> out;
  const std::size_t d = table.dim().value_or(0);
  std::size_t i = 0;
  while (i < events.size()) {
    std::size_t j = i;
    while (j < events.size() && events[j].user_id == events[i].user_id && events[j].timestamp == events[i].timestamp)
      ++j;
    auto u = user_index.find(events[i].user_id);
    if (u != user_index.end()) {
      Vector cand(d, 0.0), prev_sum(d, 0.0);
      for (std::size_t t = i; t < j; ++t) {
        const auto& e = table.at(events[t].item_id).embedding;
        for (std::size_t k = 0; k < d; ++k) cand[k] += e[k];
      }
      for (double& v : cand) v /= static_cast<double>(j - i);
      std::size_t shown = 0;
      for (std::size_t t = i; t < j; ++t) {
        const auto& e = table.at(events[t].item_id).embedding;
        if (events[t].label) {
          TrainingSample s;
          s.user = u->second;
          s.item = e;
          s.h_cand = cand;
          s.h_prev.assign(d, 0.0);
          if (shown > 0)
            for (std::size_t k = 0; k < d; ++k) s.h_prev[k] = prev_sum[k] / static_cast<double>(shown);
          s.label = *events[t].label;
          out.push_back(std::move(s));
        }
        for (std::size_t k = 0; k < d; ++k) prev_sum[k] += e[k];
        ++shown;
      }
    }
    i = j;
  }
  return out;
}

struct EpochStats {
  std::int64_t epoch = 0;
  double loss = 0.0;
  double auc = 0.0;
};

struct TrainedModel {
  MieParams mie;
  CaeParams cae;
  std::vector<EpochStats> curve;
};

inline std::vector<ad::Tensor> all_parameters(const MieParams& mie, const CaeParams& cae) {
  auto out = mie.parameters();
  auto c = cae.parameters();
  out.insert(out.end(), c.begin(), c.end());
  return out;
}

inline ad::NamedTensors named_parameters(const MieParams& mie, const CaeParams& cae) {
  ad::NamedTensors out;
  auto attn = [&](const std::string& prefix, const AttentionParams& a) {
    for (std::size_t h = 0; h < a.heads(); ++h) {
      out.emplace_back(prefix + ".wq" + std::to_string(h), a.wq[h]);
      out.emplace_back(prefix + ".wk" + std::to_string(h), a.wk[h]);
      out.emplace_back(prefix + ".wv" + std::to_string(h), a.wv[h]);
    }
    out.emplace_back(prefix + ".wo", a.wo);
  };
  attn("macro", mie.macro);
  attn("micro", mie.micro);
  out.emplace_back("time_embedding", mie.time_embedding);
  out.emplace_back("cae.w1_prev", cae.w1_prev);
  out.emplace_back("cae.w2_prev", cae.w2_prev);
  out.emplace_back("cae.w1_cand", cae.w1_cand);
  out.emplace_back("cae.w2_cand", cae.w2_cand);
  out.emplace_back("cae.mlp_w1", cae.mlp_w1);
  out.emplace_back("cae.mlp_b1", cae.mlp_b1);
  out.emplace_back("cae.mlp_w2", cae.mlp_w2);
  out.emplace_back("cae.mlp_b2", cae.mlp_b2);
  return out;
}

inline std::pair<MieParams, CaeParams> params_from_named(const ad::NamedTensors& named) {
  std::map<std::string, ad::Tensor> by_name(named.begin(), named.end());
  auto take = [&](const std::string& n) {
    auto it = by_name.find(n);
    if (it == by_name.end()) throw ValidationError("checkpoint is missing tensor '" + n + "'");
    return it->second;
  };
  auto attn = [&](const std::string& prefix) {
    AttentionParams a;
    for (std::size_t h = 0; by_name.count(prefix + ".wq" + std::to_string(h)); ++h) {
      a.wq.push_back(take(prefix + ".wq" + std::to_string(h)));
      a.wk.push_back(take(prefix + ".wk" + std::to_string(h)));
      a.wv.push_back(take(prefix + ".wv" + std::to_string(h)));
    }
    if (a.wq.empty()) throw ValidationError("checkpoint has no heads for '" + prefix + "'");
    a.wo = take(prefix + ".wo");
    a.scale = 1.0 / std::sqrt(static_cast<double>(a.head_dim()));
    return a;
  };
  MieParams mie{attn("macro"), attn("micro"), take("time_embedding")};
  CaeParams cae{take("cae.w1_prev"), take("cae.w2_prev"), take("cae.w1_cand"), take("cae.w2_cand"),
                take("cae.mlp_w1"),  take("cae.mlp_b1"),  take("cae.mlp_w2"),  take("cae.mlp_b2")};
  return {std::move(mie), std::move(cae)};
}

struct TrainOptions {
  double learning_rate = 0.003;
  bool adam = true;
  std::int64_t epochs = 20;
  std::uint64_t seed = 42;
};

namespace detail {

/// Differentiable per-user loss over that user's samples.
inline ad::Tensor user_loss(const InterestInputs& in, std::span<const TrainingSample* const> samples,
                            const MieParams& mie, const CaeParams& cae, std::vector<double>* probs) {
  auto h_macro = macro_interest(in.points, mie.macro);
  auto h_micro = micro_interest(in.recent, in.now, mie);
  std::vector<ad::Tensor> rows;
  std::vector<std::size_t> targets;
  for (const TrainingSample* s : samples) {
    rows.push_back(cae_logits(ad::Tensor::row_vector(s->item), ad::Tensor::row_vector(s->h_prev),
                              ad::Tensor::row_vector(s->h_cand), h_macro, h_micro, cae));
    targets.push_back(static_cast<std::size_t>(s->label));
  }
  auto logits = ad::concat_rows(rows);
  if (probs)
    for (std::size_t i = 0; i < logits.rows(); ++i)
      probs->push_back(ad::sigmoid_scalar(logits(i, 1) - logits(i, 0)));
  return ad::softmax_cross_entropy(logits, targets);
}

}  // namespace detail

/// Evaluates mean cross-entropy and AUC of the current parameters.
inline EpochStats evaluate_model(std::span<const InterestInputs> users, std::span<const TrainingSample> samples,
                                 const MieParams& mie, const CaeParams& cae) {
  std::vector<std::vector<const TrainingSample*>> by_user(users.size());
  for (const auto& s : samples) by_user[s.user].push_back(&s);
  std::vector<double> probs;
  std::vector<int> labels;
  for (std::size_t u = 0; u < users.size(); ++u) {
    if (by_user[u].empty()) continue;
    detail::user_loss(users[u], by_user[u], mie, cae, &probs);
    for (const auto* s : by_user[u]) labels.push_back(s->label);
  }
  return {0, logloss(probs, labels), auc(probs, labels)};
}

/// Joint training of interest encoders and the accuracy model, one Adam
/// (or plain SGD) step per user batch. Users are visited in a seeded shuffled order each epoch.
inline TrainedModel train_cae(std::span<const InterestInputs> users, std::span<const TrainingSample> samples,
                              MieParams mie, CaeParams cae, const TrainOptions& opt) {
  bool pos = false, neg = false;
  for (const auto& s : samples) (s.label ? pos : neg) = true;
  if (!pos || !neg) throw ValidationError("train_cae: need both positive and negative labels");
  std::vector<std::vector<const TrainingSample*>> by_user(users.size());
  for (const auto& s : samples) {
    if (s.user >= users.size()) throw ValidationError("train_cae: sample refers to unknown user");
    by_user[s.user].push_back(&s);
  }
  auto params = all_parameters(mie, cae);
  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(users.size());
  std::iota(order.begin(), order.end(), 0);
  TrainedModel out{mie, cae, {}};
  ad::Adam adam(opt.learning_rate);
  for (std::int64_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t u : order) {
      if (by_user[u].empty()) continue;
      for (auto& p : params) p.grad_mut();
      auto loss = detail::user_loss(users[u], by_user[u], mie, cae, nullptr);
      ad::backward(loss);
      if (opt.adam)
        adam.step(params);
      else
        ad::sgd_step(params, opt.learning_rate);
    }
    auto stats = evaluate_model(users, samples, mie, cae);
    stats.epoch = epoch;
    out.curve.push_back(stats);
  }
  return out;
}

}  // namespace divrank
