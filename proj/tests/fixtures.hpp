#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "divrank/data_model.hpp"
#include "divrank/graph_clustering.hpp"

namespace fixtures {

using divrank::BehaviorEvent;

/// Two blocks of `per_block` users and items. Within a block each user-item
/// edge is present with probability `density` (every node keeps at least
/// one edge); there are no edges across blocks. Events are emitted in a
/// seed-dependent order.
inline std::vector<BehaviorEvent> planted_blocks(std::uint64_t seed, int per_block = 5, double density = 0.8) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(density);
  std::vector<BehaviorEvent> ev;
  for (int b = 0; b < 2; ++b) {
    std::vector<std::vector<char>> adj(per_block, std::vector<char>(per_block, 0));
    for (int u = 0; u < per_block; ++u)
      for (int i = 0; i < per_block; ++i) adj[u][i] = keep(rng);
    for (int u = 0; u < per_block; ++u) adj[u][u] = 1;
    for (int u = 0; u < per_block; ++u)
      for (int i = 0; i < per_block; ++i)
        if (adj[u][i])
          ev.push_back({"b" + std::to_string(b) + "u" + std::to_string(u), "b" + std::to_string(b) + "i" + std::to_string(i),
                        0, {}});
  }
  std::shuffle(ev.begin(), ev.end(), rng);
  return ev;
}

/// Block of a node in a planted graph, read from its name.
inline int planted_block(const divrank::BipartiteGraph& g, std::size_t node) { return g.node_name(node)[1] - '0'; }

inline std::vector<BehaviorEvent> toy_two_by_two() {
  return {{"u1", "i1", 0, {}}, {"u2", "i2", 0, {}}};
}

/// Every set partition of n nodes as restricted growth strings.
inline std::vector<std::vector<std::size_t>> all_partitions(std::size_t n) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> a(n, 0);
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t pos, std::size_t max_label) {
    if (pos == n) {
      out.push_back(a);
      return;
    }
    for (std::size_t l = 0; l <= max_label + 1 && l <= pos; ++l) {
      a[pos] = l;
      rec(pos + 1, std::max(max_label, l));
    }
  };
  if (n == 0) return {{}};
  a[0] = 0;
  rec(1, 0);
  return out;
}

}  // namespace fixtures
