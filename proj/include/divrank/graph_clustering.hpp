#pragma once

// User-item bipartite graph, Barber bipartite modularity, and a Louvain
// optimizer over it.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "divrank/data_model.hpp"

namespace divrank {

/// Node ids: users occupy [0, U) in ascending user_id order, items occupy
/// [U, U + I) in ascending item_id order. Edges are deduplicated, weight 1.
class BipartiteGraph {
 public:
  std::size_t user_count() const { return users_.size(); }
  std::size_t item_count() const { return items_.size(); }
  std::size_t node_count() const { return users_.size() + items_.size(); }
  std::size_t edge_count() const { return edges_; }

  bool is_user(std::size_t node) const { return node < users_.size(); }
  const std::string& node_name(std::size_t node) const {
    return is_user(node) ? users_[node] : items_[node - users_.size()];
  }
  const std::vector<std::string>& users() const { return users_; }
  const std::vector<std::string>& items() const { return items_; }

  /// Neighbor node ids (items for a user, users for an item), ascending.
  const std::vector<std::size_t>& neighbors(std::size_t node) const { return adj_[node]; }
  std::size_t degree(std::size_t node) const { return adj_[node].size(); }

  std::optional<std::size_t> item_node(const std::string& item_id) const {
    auto it = std::lower_bound(items_.begin(), items_.end(), item_id);
    if (it == items_.end() || *it != item_id) return std::nullopt;
    return users_.size() + static_cast<std::size_t>(it - items_.begin());
  }

  friend BipartiteGraph build_graph(std::span<const BehaviorEvent> events);

 private:
  std::vector<std::string> users_;
  std::vector<std::string> items_;
  std::vector<std::vector<std::size_t>> adj_;
  std::size_t edges_ = 0;
};

inline BipartiteGraph build_graph(std::span<const BehaviorEvent> events) {
  if (events.empty()) throw ValidationError("build_graph: no events");
  std::set<std::pair<std::string, std::string>> pairs;
  std::set<std::string> users, items;
  for (const auto& e : events) {
    pairs.emplace(e.user_id, e.item_id);
    users.insert(e.user_id);
    items.insert(e.item_id);
  }
  BipartiteGraph g;
  g.users_.assign(users.begin(), users.end());
  g.items_.assign(items.begin(), items.end());
  g.adj_.resize(g.node_count());
  std::unordered_map<std::string, std::size_t> uid, iid;
  for (std::size_t i = 0; i < g.users_.size(); ++i) uid[g.users_[i]] = i;
  for (std::size_t j = 0; j < g.items_.size(); ++j) iid[g.items_[j]] = g.users_.size() + j;
  for (const auto& [u, i] : pairs) {
    const std::size_t un = uid[u], in = iid[i];
    g.adj_[un].push_back(in);
    g.adj_[in].push_back(un);
  }
  for (auto& a : g.adj_) std::sort(a.begin(), a.end());
  g.edges_ = pairs.size();
  return g;
}

struct ClusterAssignment {
  std::vector<std::size_t> node_cluster;  // indexed by graph node id
  std::size_t count = 0;
  // Clusters [0, item_cluster_count) contain at least one item node.
  std::size_t item_cluster_count = 0;

  std::size_t operator[](std::size_t node) const { return node_cluster[node]; }
};

/// Assignment with every node in its own cluster.
inline ClusterAssignment singleton_assignment(const BipartiteGraph& g) {
  ClusterAssignment c;
  c.node_cluster.resize(g.node_count());
  for (std::size_t v = 0; v < g.node_count(); ++v) c.node_cluster[v] = v;
  c.count = g.node_count();
  c.item_cluster_count = g.item_count();
  return c;
}

/// Q = (1/E) sum_{user i, item j} (A_ij - k_i d_j / E) delta(c_i, c_j).
inline double modularity(const BipartiteGraph& g, const ClusterAssignment& c) {
  if (g.edge_count() == 0) throw ValidationError("modularity undefined for a graph without edges");
  if (c.node_cluster.size() != g.node_count()) throw ValidationError("assignment does not cover all nodes");
  const double E = static_cast<double>(g.edge_count());
  std::unordered_map<std::size_t, double> user_deg, item_deg;
  double inside = 0.0;
  for (std::size_t u = 0; u < g.user_count(); ++u) {
    user_deg[c[u]] += static_cast<double>(g.degree(u));
    for (std::size_t j : g.neighbors(u))
      if (c[u] == c[j]) inside += 1.0;
  }
  for (std::size_t j = g.user_count(); j < g.node_count(); ++j) item_deg[c[j]] += static_cast<double>(g.degree(j));
  double expected = 0.0;
  for (const auto& [cl, k] : user_deg) {
    auto it = item_deg.find(cl);
    if (it != item_deg.end()) expected += k * it->second;
  }
  return (inside - expected / E) / E;
}

struct LouvainMove {
  std::size_t node;                  // lowest original node among those moved
  std::vector<std::size_t> members;  // every original node moved together
  std::size_t from;                  // cluster labels are original node ids
  std::size_t to;
  double delta_q;  // incremental gain computed by the optimizer
};

namespace detail {

/// Renumbers clusters densely: clusters holding items first, in order of
/// their lowest item node, then user-only clusters by lowest user node.
inline ClusterAssignment densify(const BipartiteGraph& g, const std::vector<std::size_t>& labels) {
  ClusterAssignment out;
  out.node_cluster.resize(labels.size());
  std::unordered_map<std::size_t, std::size_t> remap;
  for (std::size_t v = g.user_count(); v < g.node_count(); ++v)
    if (!remap.count(labels[v])) remap.emplace(labels[v], remap.size());
  out.item_cluster_count = remap.size();
  for (std::size_t v = 0; v < g.user_count(); ++v)
    if (!remap.count(labels[v])) remap.emplace(labels[v], remap.size());
  for (std::size_t v = 0; v < labels.size(); ++v) out.node_cluster[v] = remap.at(labels[v]);
  out.count = remap.size();
  return out;
}

}  // namespace detail

/// Louvain from singletons. Each level runs local moves until a full pass
/// changes nothing (or `max_passes` passes), then contracts every cluster
/// into one super-node and repeats; it stops at the first level without a
/// move. Super-nodes are scanned in ascending order of their cluster name
/// and move only on a strict gain in Q. Equal-gain targets
/// are broken by the seeded generator. Gains are compared on the integer
/// numerator E * links - K * D' - D * K' so ties are exact.
inline ClusterAssignment louvain(const BipartiteGraph& g, std::uint64_t seed, int max_passes,
                                 const std::function<void(const LouvainMove&)>& on_move = {}) {
  if (g.edge_count() == 0) throw ValidationError("louvain: graph has no edges");
  const std::size_t n = g.node_count();
  const std::int64_t E = static_cast<std::int64_t>(g.edge_count());

  // Current super-nodes; each carries the name of the cluster it came
  // from, its user degree K, item degree D, and weighted links to the
  // other super-nodes.
  struct Super {
    std::size_t name = 0;
    std::vector<std::size_t> members;
    std::int64_t K = 0, D = 0;
    std::map<std::size_t, std::int64_t> links;
  };
  std::vector<Super> supers(n);
  for (std::size_t v = 0; v < n; ++v) {
    supers[v].name = v;
    supers[v].members = {v};
    (g.is_user(v) ? supers[v].K : supers[v].D) = static_cast<std::int64_t>(g.degree(v));
    for (std::size_t w : g.neighbors(v)) supers[v].links[w] += 1;
  }
  std::vector<std::size_t> node_label(n);
  for (std::size_t v = 0; v < n; ++v) node_label[v] = v;

  std::mt19937_64 rng(seed);
  std::vector<std::int64_t> user_tot(n, 0), item_tot(n, 0);
  std::unordered_map<std::size_t, std::int64_t> links;
  std::vector<std::size_t> ties, targets;

  while (true) {
    const std::size_t m = supers.size();
    // Clusters are named by original node ids and keep their names across
    // levels.
    std::vector<std::size_t> label(m);
    std::fill(user_tot.begin(), user_tot.end(), 0);
    std::fill(item_tot.begin(), item_tot.end(), 0);
    for (std::size_t s = 0; s < m; ++s) {
      label[s] = supers[s].name;
      user_tot[label[s]] += supers[s].K;
      item_tot[label[s]] += supers[s].D;
    }
    bool level_moved = false;
    for (int pass = 0; pass < max_passes; ++pass) {
      bool moved = false;
      for (std::size_t s = 0; s < m; ++s) {
        const Super& sn = supers[s];
        const std::size_t current = label[s];
        links.clear();
        for (const auto& [t, w] : sn.links) links[label[t]] += w;
        // Totals of the current cluster without s itself.
        user_tot[current] -= sn.K;
        item_tot[current] -= sn.D;
        auto value = [&](std::size_t c) {
          auto it = links.find(c);
          const std::int64_t e = it == links.end() ? 0 : it->second;
          return e * E - sn.K * item_tot[c] - sn.D * user_tot[c];
        };
        const std::int64_t current_value = value(current);
        std::int64_t best = current_value;
        ties.clear();
        targets.clear();
        for (const auto& [c, e] : links) targets.push_back(c);
        std::sort(targets.begin(), targets.end());
        for (std::size_t c : targets) {
          if (c == current) continue;
          const std::int64_t val = value(c);
          if (val > best) {
            best = val;
            ties.assign(1, c);
          } else if (val == best && val > current_value) {
            ties.push_back(c);
          }
        }
        std::size_t to = current;
        if (!ties.empty())
          to = ties.size() == 1 ? ties.front()
                                : ties[std::uniform_int_distribution<std::size_t>(0, ties.size() - 1)(rng)];
        user_tot[to] += sn.K;
        item_tot[to] += sn.D;
        if (to == current) continue;
        label[s] = to;
        moved = true;
        for (std::size_t v : sn.members) node_label[v] = to;
        if (on_move) {
          const double dq = static_cast<double>(best - current_value) / static_cast<double>(E * E);
          on_move({sn.members.front(), sn.members, current, to, dq});
        }
      }
      if (!moved) break;
      level_moved = true;
    }
    if (!level_moved) break;

    // Contract: one super-node per cluster, ordered by cluster name.
    std::map<std::size_t, std::size_t> index;
    for (std::size_t s = 0; s < m; ++s) index.emplace(label[s], 0);
    std::size_t next = 0;
    for (auto& [c, i] : index) i = next++;
    std::vector<Super> merged(index.size());
    for (const auto& [c, i] : index) merged[i].name = c;
    for (std::size_t s = 0; s < m; ++s) {
      Super& dst = merged[index.at(label[s])];
      dst.members.insert(dst.members.end(), supers[s].members.begin(), supers[s].members.end());
      dst.K += supers[s].K;
      dst.D += supers[s].D;
      for (const auto& [t, w] : supers[s].links) {
        const std::size_t tt = index.at(label[t]);
        if (tt != index.at(label[s])) dst.links[tt] += w;
      }
    }
    for (auto& sn : merged) std::sort(sn.members.begin(), sn.members.end());
    if (merged.size() == 1) break;
    supers = std::move(merged);
  }
  return detail::densify(g, node_label);
}

/// Mean embedding of each item cluster; clusters without an embedded member
/// get an empty centroid.
inline std::vector<Vector> cluster_centroids(const EmbeddingTable& table,
                                             const std::map<std::string, std::int64_t>& item_cluster) {
  std::int64_t count = 0;
  for (const auto& [id, c] : item_cluster) count = std::max(count, c + 1);
  const std::size_t d = table.dim().value_or(0);
  std::vector<Vector> sums(static_cast<std::size_t>(count), Vector(d, 0.0));
  std::vector<std::size_t> members(static_cast<std::size_t>(count), 0);
  for (const auto& [id, c] : item_cluster) {
    const ItemRecord* it = table.find(id);
    if (!it) continue;
    for (std::size_t k = 0; k < d; ++k) sums[c][k] += it->embedding[k];
    ++members[c];
  }
  for (std::size_t c = 0; c < sums.size(); ++c) {
    if (members[c] == 0) {
      sums[c].clear();
      continue;
    }
    for (double& v : sums[c]) v /= static_cast<double>(members[c]);
  }
  return sums;
}

/// Nearest centroid by dot product; ties go to the lowest cluster id.
inline std::vector<std::int64_t> assign_new_items(std::span<const ItemRecord> items, std::span<const Vector> centroids) {
  bool any = false;
  for (const auto& c : centroids) any = any || !c.empty();
  if (!any) throw ValidationError("assign_new_items: clustering is empty");
  std::vector<std::int64_t> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    std::int64_t best = -1;
    double best_dot = 0.0;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      if (centroids[c].empty()) continue;
      if (centroids[c].size() != item.embedding.size())
        throw ValidationError("assign_new_items: dimension mismatch for '" + item.item_id + "'");
      double dot = 0.0;
      for (std::size_t k = 0; k < item.embedding.size(); ++k) dot += item.embedding[k] * centroids[c][k];
      if (best < 0 || dot > best_dot) {
        best = static_cast<std::int64_t>(c);
        best_dot = dot;
      }
    }
    out.push_back(best);
  }
  return out;
}

/// Item clusters for every item in the table: graph items take their
/// Louvain cluster, the rest go to the nearest centroid.
inline std::map<std::string, std::int64_t> cluster_all_items(const EmbeddingTable& table, const BipartiteGraph& g,
                                                             const ClusterAssignment& c) {
  std::map<std::string, std::int64_t> out;
  for (std::size_t v = g.user_count(); v < g.node_count(); ++v)
    out[g.node_name(v)] = static_cast<std::int64_t>(c[v]);
  std::vector<ItemRecord> rest;
  for (const auto& it : table.items())
    if (!out.count(it.item_id)) rest.push_back(it);
  if (!rest.empty()) {
    auto centroids = cluster_centroids(table, out);
    auto ids = assign_new_items(rest, centroids);
    for (std::size_t i = 0; i < rest.size(); ++i) out[rest[i].item_id] = ids[i];
  }
  return out;
}

inline void write_cluster_file(const std::string& path, const std::map<std::string, std::int64_t>& item_cluster) {
  std::string text;
  for (const auto& [id, c] : item_cluster) text += json{{"item_id", id}, {"cluster_id", c}}.dump() + "\n";
  write_text(path, text);
}

inline std::map<std::string, std::int64_t> load_cluster_file(const std::string& path) {
  std::map<std::string, std::int64_t> out;
  detail::for_each_line(path, [&](const json& j, std::size_t) {
    const std::int64_t c = j.at("cluster_id").get<std::int64_t>();
    if (c < 0) throw ValidationError("negative cluster_id");
    out[j.at("item_id").get<std::string>()] = c;
  });
  return out;
}

}  // namespace divrank
