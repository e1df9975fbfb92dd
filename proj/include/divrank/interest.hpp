#pragma once

// Multi-scale interest extraction: macro interests from cluster-pooled
// behavior groups, micro interests from recent items with time-decay
// features, both encoded by multi-head self-attention.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "divrank/data_model.hpp"
#include "divrank/tensor.hpp"

namespace divrank {

struct AttentionParams {
  std::vector<ad::Tensor> wq, wk, wv;  // per head, input_dim x head_dim
  ad::Tensor wo;                       // (heads * head_dim) x output_dim
  double scale = 1.0;                  // 1/sqrt(head_dim)

  std::size_t heads() const { return wq.size(); }
  std::size_t input_dim() const { return wq.empty() ? 0 : wq.front().rows(); }
  std::size_t head_dim() const { return wq.empty() ? 0 : wq.front().cols(); }
  std::size_t output_dim() const { return wo.cols(); }

  static AttentionParams random(std::size_t input_dim, std::size_t output_dim, std::size_t heads,
                                std::size_t head_dim, std::mt19937_64& rng) {
    AttentionParams p;
    for (std::size_t h = 0; h < heads; ++h) {
      p.wq.push_back(ad::Tensor::parameter(input_dim, head_dim, rng));
      p.wk.push_back(ad::Tensor::parameter(input_dim, head_dim, rng));
      p.wv.push_back(ad::Tensor::parameter(input_dim, head_dim, rng));
    }
    p.wo = ad::Tensor::parameter(heads * head_dim, output_dim, rng);
    p.scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    return p;
  }

  std::vector<ad::Tensor> parameters() const {
    std::vector<ad::Tensor> out;
    for (std::size_t h = 0; h < heads(); ++h) {
      out.push_back(wq[h]);
      out.push_back(wk[h]);
      out.push_back(wv[h]);
    }
    out.push_back(wo);
    return out;
  }
};

/// Self-attention over the rows of `inputs`; heads are concatenated,
/// projected by W^O, and mean-pooled over positions into a 1 x output row.
inline ad::Tensor multi_head_attention(const ad::Tensor& inputs, const AttentionParams& p) {
  if (inputs.rows() == 0) throw ValidationError("multi_head_attention: no inputs");
  if (p.heads() == 0) throw ValidationError("multi_head_attention: no heads");
  if (inputs.cols() != p.input_dim()) {
    throw ValidationError("multi_head_attention: input dim " + std::to_string(inputs.cols()) + " but params expect " +
                          std::to_string(p.input_dim()));
  }
  if (p.wo.rows() != p.heads() * p.head_dim()) throw ValidationError("multi_head_attention: W^O rows mismatch");
  std::vector<ad::Tensor> heads;
  heads.reserve(p.heads());
  for (std::size_t h = 0; h < p.heads(); ++h) {
    auto q = ad::matmul(inputs, p.wq[h]);
    auto k = ad::matmul(inputs, p.wk[h]);
    auto v = ad::matmul(inputs, p.wv[h]);
    auto attn = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), p.scale));
    heads.push_back(ad::matmul(attn, v));
  }
  auto projected = ad::matmul(heads.size() == 1 ? heads.front() : ad::concat_cols(heads), p.wo);
  return ad::mean_rows(projected);
}

inline ad::Tensor stack_rows(std::span<const Vector> rows) {
  if (rows.empty()) throw ValidationError("stack_rows: no rows");
  const std::size_t c = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * c);
  for (const auto& r : rows) {
    if (r.size() != c) throw ValidationError("stack_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return ad::Tensor(rows.size(), c, std::move(data));
}

struct InterestPoint {
  std::int64_t cluster_id = 0;
  std::vector<std::string> members;  // one entry per behavior occurrence
  Vector pooled;                     // sum of member embeddings
  std::int64_t last_ts = 0;
};

/// Groups a user's behavior items by cluster and keeps the top-M groups by
/// member count, ties broken by most recent interaction then cluster id.
inline std::vector<InterestPoint> group_interest_points(std::span<const BehaviorEvent> behaviors,
                                                        const std::map<std::string, std::int64_t>& clusters,
                                                        const EmbeddingTable& table, std::size_t M) {
  std::map<std::int64_t, InterestPoint> groups;
  for (const auto& e : behaviors) {
    auto c = clusters.find(e.item_id);
    if (c == clusters.end()) throw ValidationError("behavior item '" + e.item_id + "' has no cluster");
    const ItemRecord& item = table.at(e.item_id);
    auto& g = groups[c->second];
    if (g.members.empty()) {
      g.cluster_id = c->second;
      g.pooled.assign(item.embedding.size(), 0.0);
      g.last_ts = e.timestamp;
    }
    g.members.push_back(e.item_id);
    for (std::size_t k = 0; k < item.embedding.size(); ++k) g.pooled[k] += item.embedding[k];
    g.last_ts = std::max(g.last_ts, e.timestamp);
  }
  std::vector<InterestPoint> points;
  for (auto& [id, g] : groups) points.push_back(std::move(g));
  std::stable_sort(points.begin(), points.end(), [](const InterestPoint& a, const InterestPoint& b) {
    if (a.members.size() != b.members.size()) return a.members.size() > b.members.size();
    if (a.last_ts != b.last_ts) return a.last_ts > b.last_ts;
    return a.cluster_id < b.cluster_id;
  });
  if (points.size() > M) points.resize(M);
  return points;
}

/// floor(log2(1 + dt / 3600)), capped at buckets - 1.
inline std::size_t time_bucket(std::int64_t delta_seconds, std::size_t buckets) {
  if (delta_seconds < 0) throw ValidationError("time_bucket: negative interval");
  if (buckets == 0) throw ValidationError("time_bucket: zero buckets");
  const double b = std::floor(std::log2(1.0 + static_cast<double>(delta_seconds) / 3600.0));
  return std::min(static_cast<std::size_t>(b), buckets - 1);
}

struct MieParams {
  AttentionParams macro;
  AttentionParams micro;
  ad::Tensor time_embedding;  // buckets x time_dim

  std::size_t dim() const { return macro.output_dim(); }
  std::size_t buckets() const { return time_embedding.rows(); }
  std::size_t time_dim() const { return time_embedding.cols(); }

  static MieParams random(std::size_t d, std::size_t heads, std::size_t buckets, std::size_t time_dim,
                          std::mt19937_64& rng) {
    const std::size_t head_dim = std::max<std::size_t>(1, d / heads);
    MieParams p;
    p.macro = AttentionParams::random(d, d, heads, head_dim, rng);
    p.micro = AttentionParams::random(d + time_dim, d, heads, head_dim, rng);
    p.time_embedding = ad::Tensor::parameter(buckets, time_dim, rng);
    return p;
  }

  std::vector<ad::Tensor> parameters() const {
    auto out = macro.parameters();
    auto m = micro.parameters();
    out.insert(out.end(), m.begin(), m.end());
    out.push_back(time_embedding);
    return out;
  }
};

/// Attention over pooled interest-point vectors; zero points give the zero vector.
inline ad::Tensor macro_interest(std::span<const InterestPoint> points, const AttentionParams& params) {
  if (points.empty()) return ad::Tensor(1, params.output_dim());
  std::vector<Vector> rows;
  rows.reserve(points.size());
  for (const auto& p : points) rows.push_back(p.pooled);
  return multi_head_attention(stack_rows(rows), params);
}

struct RecentItem {
  Vector embedding;
  std::int64_t timestamp = 0;
};

/// Attention over recent items expanded with their time-decay embeddings.
inline ad::Tensor micro_interest(std::span<const RecentItem> recent, std::int64_t now, const MieParams& params) {
  if (recent.empty()) return ad::Tensor(1, params.micro.output_dim());
  std::vector<std::size_t> buckets;
  std::vector<Vector> rows;
  for (const auto& r : recent) {
    if (r.timestamp > now) throw ValidationError("micro_interest: event timestamp after 'now'");
    buckets.push_back(time_bucket(now - r.timestamp, params.buckets()));
    rows.push_back(r.embedding);
  }
  auto items = stack_rows(rows);
  auto expanded = params.time_dim() == 0
                      ? items
                      : ad::concat_cols({items, ad::gather_rows(params.time_embedding, buckets)});
  return multi_head_attention(expanded, params.micro);
}

/// Per-user inputs to the interest encoders, independent of learned parameters.
struct InterestInputs {
  std::string user_id;
  std::vector<InterestPoint> points;
  std::vector<RecentItem> recent;  // most recent first
  std::vector<std::string> recent_ids;
  std::int64_t now = 0;
};

/// `behaviors` holds one user's positive interactions in ascending time.
inline InterestInputs build_interest_inputs(const std::string& user_id, std::span<const BehaviorEvent> behaviors,
                                            const std::map<std::string, std::int64_t>& clusters,
                                            const EmbeddingTable& table, std::size_t top_m, std::size_t window,
                                            std::int64_t now) {
  InterestInputs in;
  in.user_id = user_id;
  in.now = now;
  in.points = group_interest_points(behaviors, clusters, table, top_m);
  for (auto it = behaviors.rbegin(); it != behaviors.rend() && in.recent.size() < window; ++it) {
    if (it->timestamp > now) continue;
    in.recent.push_back({table.at(it->item_id).embedding, it->timestamp});
    in.recent_ids.push_back(it->item_id);
  }
  return in;
}

struct InterestProfile {
  std::string user_id;
  Vector h_macro;
  Vector h_micro;

  friend bool operator==(const InterestProfile&, const InterestProfile&) = default;
};

inline InterestProfile compute_profile(const InterestInputs& in, const MieParams& params) {
  return {in.user_id, macro_interest(in.points, params.macro).to_vector(),
          micro_interest(in.recent, in.now, params).to_vector()};
}

inline json to_json(const InterestProfile& p) {
  return json{{"user_id", p.user_id}, {"h_macro", p.h_macro}, {"h_micro", p.h_micro}};
}

inline std::map<std::string, InterestProfile> load_profiles(const std::string& path) {
  std::map<std::string, InterestProfile> out;
  detail::for_each_line(path, [&](const json& j, std::size_t) {
    InterestProfile p{j.at("user_id").get<std::string>(), j.at("h_macro").get<Vector>(), j.at("h_micro").get<Vector>()};
    if (p.h_macro.size() != p.h_micro.size()) throw ValidationError("profile vectors differ in length");
    out[p.user_id] = std::move(p);
  });
  return out;
}

}  // namespace divrank
