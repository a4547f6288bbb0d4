#pragma once

#include <limits>
#include <queue>
#include <vector>

#include "tacserv/common.hpp"

namespace tacserv {

/// Undirected weighted graph as adjacency lists.
struct AdjGraph {
  struct Edge {
    int to;
    double w;
  };
  std::vector<std::vector<Edge>> adj;

  int size() const { return static_cast<int>(adj.size()); }

  void add_edge(int i, int j, double w) {
    adj[i].push_back({j, w});
    adj[j].push_back({i, w});
  }
};

/// Single-source shortest paths (binary-heap Dijkstra).
/// Unreachable vertices get +inf.
inline std::vector<double> dijkstra(const AdjGraph& g, int source) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(g.adj.size(), inf);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
  dist[source] = 0.0;
  pq.push({0.0, source});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    for (const auto& e : g.adj[u]) {
      const double nd = d + e.w;
      if (nd < dist[e.to]) {
        dist[e.to] = nd;
        pq.push({nd, e.to});
      }
    }
  }
  return dist;
}

/// Connected component sizes, largest first ordering not guaranteed.
inline std::vector<int> component_sizes(const AdjGraph& g) {
  std::vector<int> comp(g.adj.size(), -1);
  std::vector<int> sizes;
  for (int s = 0; s < g.size(); ++s) {
    if (comp[s] >= 0) continue;
    int c = static_cast<int>(sizes.size());
    sizes.push_back(0);
    std::vector<int> stack{s};
    comp[s] = c;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      ++sizes[c];
      for (const auto& e : g.adj[u]) {
        if (comp[e.to] < 0) {
          comp[e.to] = c;
          stack.push_back(e.to);
        }
      }
    }
  }
  return sizes;
}

}  // namespace tacserv
