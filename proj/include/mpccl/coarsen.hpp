#pragma once

#include "mpccl/common.hpp"
#include "mpccl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

namespace mpccl {

// Weighted undirected graph used during coarsening. Neighbor lists are kept
// sorted by node id; entries may carry weight 0 (a structural edge whose
// cosine similarity clamped to zero). node_mass counts how many original
// nodes each current node represents.
struct WeightedGraph {
  int n_nodes = 0;
  std::vector<std::vector<std::pair<int, double>>> adj;
  std::vector<std::int64_t> node_mass;

  static WeightedGraph empty(int n) {
    WeightedGraph g;
    g.n_nodes = n;
    g.adj.resize(n);
    g.node_mass.assign(n, 1);
    return g;
  }

  void add_edge(int u, int v, double w) {
    adj[u].emplace_back(v, w);
    adj[v].emplace_back(u, w);
  }

  void sort_neighbors() {
    for (auto& lst : adj) std::sort(lst.begin(), lst.end());
  }

  // sum of w over undirected edges
  double total_weight() const {
    double twice = 0.0;
    for (const auto& lst : adj)
      for (const auto& [v, w] : lst) twice += w;
    return twice / 2.0;
  }

  SpMat to_sparse() const {
    std::vector<Triplet> trip;
    for (int u = 0; u < n_nodes; ++u)
      for (const auto& [v, w] : adj[u]) trip.emplace_back(u, v, w);
    SpMat out(n_nodes, n_nodes);
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
  }
};

// Maps each original node to its super-node id at one scale.
struct MergeMap {
  std::vector<int> assignment;

  static MergeMap identity(int n) {
    MergeMap m;
    m.assignment.resize(n);
    std::iota(m.assignment.begin(), m.assignment.end(), 0);
    return m;
  }
};

struct CoarsenedGraph {
  WeightedGraph graph;
  MergeMap merge_map;  // original node -> super-node at this scale
  double scale = 1.0;
  int target_nodes = 0;
  int steps = 0;              // match+merge passes executed up to this scale
  double dropped_weight = 0;  // intra-pair weight folded away since the original graph
  bool early_stopped = false; // a pass produced no pairs before reaching the target
};

// Assigns each structural edge of the graph the clamped cosine similarity of
// its endpoint features: w(u,v) = max(0, cos(x_u, x_v)). Zero-norm feature
// rows give weight 0 on their edges.
inline WeightedGraph edge_weights(const AttributedGraph& g) {
  WeightedGraph wg = WeightedGraph::empty(g.n_nodes);
  Vec norms(g.n_nodes);
  for (int i = 0; i < g.n_nodes; ++i) norms(i) = g.features.row(i).norm();
  for (int k = 0; k < g.adjacency.outerSize(); ++k) {
    for (SpMat::InnerIterator it(g.adjacency, k); it; ++it) {
      int u = static_cast<int>(it.row());
      int v = static_cast<int>(it.col());
      if (u >= v) continue;  // each undirected edge once
      double w = 0.0;
      if (norms(u) > 0.0 && norms(v) > 0.0) {
        w = g.features.row(u).dot(g.features.row(v)) / (norms(u) * norms(v));
        w = std::max(0.0, w);
      }
      wg.add_edge(u, v, w);
    }
  }
  wg.sort_neighbors();
  return wg;
}

// Disjoint pair matching: greedy over all edges in non-increasing weight
// order, ties broken by (min endpoint, max endpoint). Pairs are returned in
// selection order. Nodes with no unmatched neighbor stay unmatched.
inline std::vector<std::pair<int, int>> match_pairs(const WeightedGraph& wg) {
  struct E {
    double w;
    int u, v;
  };
  std::vector<E> edges;
  for (int u = 0; u < wg.n_nodes; ++u)
    for (const auto& [v, w] : wg.adj[u])
      if (u < v) edges.push_back({w, u, v});
  std::sort(edges.begin(), edges.end(), [](const E& a, const E& b) {
    if (a.w != b.w) return a.w > b.w;
    if (a.u != b.u) return a.u < b.u;
    return a.v < b.v;
  });
  std::vector<char> matched(wg.n_nodes, 0);
  std::vector<std::pair<int, int>> pairs;
  for (const E& e : edges) {
    if (matched[e.u] || matched[e.v]) continue;
    matched[e.u] = matched[e.v] = 1;
    pairs.emplace_back(e.u, e.v);
  }
  return pairs;
}

struct CoarsenStep {
  WeightedGraph graph;
  MergeMap map;  // old node -> new node
  double dropped_weight = 0.0;
};

// Merges each pair (u,v) into one node whose edge weights accumulate
// w(n,x) = w(u,x) + w(v,x); the intra-pair weight is dropped (no self-loop).
// Unmatched nodes are copied unchanged. New ids are ordered by the smallest
// old id in each group.
inline CoarsenStep coarsen_step(const WeightedGraph& wg,
                                const std::vector<std::pair<int, int>>& pairs) {
  std::vector<int> partner(wg.n_nodes, -1);
  for (const auto& [u, v] : pairs) {
    if (u < 0 || v < 0 || u >= wg.n_nodes || v >= wg.n_nodes || u == v)
      throw ContractViolation("coarsen_step: invalid pair");
    if (partner[u] != -1 || partner[v] != -1)
      throw ContractViolation("coarsen_step: overlapping pairs");
    partner[u] = v;
    partner[v] = u;
  }

  CoarsenStep out;
  out.map.assignment.assign(wg.n_nodes, -1);
  int next_id = 0;
  for (int u = 0; u < wg.n_nodes; ++u) {
    if (out.map.assignment[u] != -1) continue;
    out.map.assignment[u] = next_id;
    if (partner[u] != -1) out.map.assignment[partner[u]] = next_id;
    ++next_id;
  }

  WeightedGraph& cg = out.graph;
  cg.n_nodes = next_id;
  cg.adj.resize(next_id);
  cg.node_mass.assign(next_id, 0);
  for (int u = 0; u < wg.n_nodes; ++u) cg.node_mass[out.map.assignment[u]] += wg.node_mass[u];

  // accumulate relabeled edges; same-group edges fold into dropped_weight
  std::vector<std::vector<std::pair<int, double>>> acc(next_id);
  for (int u = 0; u < wg.n_nodes; ++u) {
    int a = out.map.assignment[u];
    for (const auto& [v, w] : wg.adj[u]) {
      if (u >= v) continue;
      int b = out.map.assignment[v];
      if (a == b) {
        out.dropped_weight += w;
        continue;
      }
      acc[std::min(a, b)].emplace_back(std::max(a, b), w);
    }
  }
  for (int a = 0; a < next_id; ++a) {
    auto& lst = acc[a];
    std::sort(lst.begin(), lst.end());
    for (size_t i = 0; i < lst.size();) {
      size_t j = i;
      double w = 0.0;
      while (j < lst.size() && lst[j].first == lst[i].first) w += lst[j++].second;
      cg.add_edge(a, lst[i].first, w);
      i = j;
    }
  }
  cg.sort_neighbors();
  return out;
}

// Coarsens to each scale in turn (scales sorted descending, coarser built
// from finer). Per scale the target is N_k = max(n_min, floor(s_k * N));
// match+merge passes repeat until the node count reaches N_k, merging only
// the first (n - N_k) greedy pairs of a pass that would overshoot. A pass
// with no pairs stops the scale early.
inline std::vector<CoarsenedGraph> multi_scale_coarsen(const AttributedGraph& g,
                                                       const std::vector<double>& scales,
                                                       int n_min) {
  if (n_min < 1) throw ConfigError("multi_scale_coarsen: n_min must be >= 1");
  for (size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] > 0.0) || scales[i] > 1.0)
      throw ConfigError("multi_scale_coarsen: scale must lie in (0, 1]");
    if (i > 0 && scales[i] > scales[i - 1])
      throw ConfigError("multi_scale_coarsen: scales must be sorted descending");
  }

  const int n_original = g.n_nodes;
  WeightedGraph wg = edge_weights(g);
  MergeMap cumulative = MergeMap::identity(n_original);
  int steps_total = 0;
  double dropped_total = 0.0;

  std::vector<CoarsenedGraph> out;
  out.reserve(scales.size());
  for (double s : scales) {
    int target = std::max<int>(n_min, static_cast<int>(std::floor(s * n_original)));
    bool early = false;
    while (wg.n_nodes > target) {
      auto pairs = match_pairs(wg);
      if (pairs.empty()) {
        early = true;
        break;
      }
      size_t need = static_cast<size_t>(wg.n_nodes - target);
      if (pairs.size() > need) pairs.resize(need);
      CoarsenStep step = coarsen_step(wg, pairs);
      wg = std::move(step.graph);
      for (int& a : cumulative.assignment) a = step.map.assignment[a];
      dropped_total += step.dropped_weight;
      ++steps_total;
    }
    CoarsenedGraph cg;
    cg.graph = wg;
    cg.merge_map = cumulative;
    cg.scale = s;
    cg.target_nodes = target;
    cg.steps = steps_total;
    cg.dropped_weight = dropped_total;
    cg.early_stopped = early;
    out.push_back(std::move(cg));
  }
  return out;
}

// Re-indexes coarse edge weights onto the original node set:
// lifted[u][v] = W_coarse[c(u)][c(v)] for c(u) != c(v), else 0.
inline SpMat lift_adjacency(const CoarsenedGraph& cg, int n_original) {
  if (static_cast<int>(cg.merge_map.assignment.size()) != n_original)
    throw ContractViolation("lift_adjacency: merge map does not cover all original nodes");
  std::vector<std::vector<int>> preimage(cg.graph.n_nodes);
  for (int u = 0; u < n_original; ++u) preimage[cg.merge_map.assignment[u]].push_back(u);

  std::vector<Triplet> trip;
  for (int a = 0; a < cg.graph.n_nodes; ++a) {
    for (const auto& [b, w] : cg.graph.adj[a]) {
      if (a >= b || w == 0.0) continue;
      for (int u : preimage[a])
        for (int v : preimage[b]) {
          trip.emplace_back(u, v, w);
          trip.emplace_back(v, u, w);
        }
    }
  }
  SpMat out(n_original, n_original);
  out.setFromTriplets(trip.begin(), trip.end());
  return out;
}

}  // namespace mpccl
