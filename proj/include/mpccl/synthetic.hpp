#pragma once

#include "mpccl/common.hpp"
#include "mpccl/graph.hpp"

#include <algorithm>
#include <utility>
#include <vector>

namespace mpccl {

// Planted-partition attributed graph: homophilous topology plus sparse
// class-conditioned binary features (bag-of-words flavor). Used for the
// gradcheck fixture and as a documented stand-in when benchmark datasets
// are not on disk.
struct SyntheticSpec {
  int n_nodes = 300;
  int n_features = 64;
  int n_classes = 3;
  double avg_degree = 4.0;
  double homophily = 0.8;        // fraction of edges inside classes
  double topic_on = 0.07;        // P(topic-word feature fires)
  double background_on = 0.003;  // P(off-topic feature fires)
  std::uint64_t seed = 0;
};

inline AttributedGraph make_planted_graph(const SyntheticSpec& spec) {
  const int n = spec.n_nodes, d = spec.n_features, k = spec.n_classes;
  if (n < k || k < 1 || d < k) throw DomainError("make_planted_graph: bad shape");
  Rng rng(spec.seed);

  // mildly imbalanced class sizes
  std::vector<double> w(k);
  double wsum = 0.0;
  for (int c = 0; c < k; ++c) {
    w[c] = 1.0 + 0.35 * c;
    wsum += w[c];
  }
  std::vector<int> sizes(k);
  int assigned = 0;
  for (int c = 0; c < k; ++c) {
    sizes[c] = std::max(1, static_cast<int>(n * w[c] / wsum));
    assigned += sizes[c];
  }
  sizes[k - 1] += n - assigned;

  AttributedGraph g;
  g.n_nodes = n;
  g.n_features = d;
  g.n_classes = k;
  g.labels.resize(n);
  {
    int node = 0;
    for (int c = 0; c < k; ++c)
      for (int i = 0; i < sizes[c]; ++i) g.labels[node++] = c;
  }

  // features: each class owns a contiguous topic block of the vocabulary
  g.features = Mat::Zero(n, d);
  int block = d / k;
  for (int i = 0; i < n; ++i) {
    int c = g.labels[i];
    int lo = c * block;
    int hi = (c == k - 1) ? d : lo + block;
    bool any = false;
    for (int j = 0; j < d; ++j) {
      double p = (j >= lo && j < hi) ? spec.topic_on : spec.background_on;
      if (rng.uniform() < p) {
        g.features(i, j) = 1.0;
        any = true;
      }
    }
    if (!any) g.features(i, lo + static_cast<int>(rng.below(hi - lo))) = 1.0;
  }

  // topology: per-pair coin flips calibrated to hit avg_degree and homophily
  double intra_pairs = 0.0;
  for (int c = 0; c < k; ++c) intra_pairs += 0.5 * sizes[c] * (sizes[c] - 1.0);
  double all_pairs = 0.5 * n * (n - 1.0);
  double target_edges = 0.5 * spec.avg_degree * n;
  double p_intra = std::min(1.0, spec.homophily * target_edges / std::max(1.0, intra_pairs));
  double p_inter =
      std::min(1.0, (1.0 - spec.homophily) * target_edges / std::max(1.0, all_pairs - intra_pairs));

  std::vector<std::pair<int, int>> edges;
  std::vector<char> isolated(n, 1);
  for (int u = 0; u < n; ++u)
    for (int v = u + 1; v < n; ++v) {
      double p = g.labels[u] == g.labels[v] ? p_intra : p_inter;
      if (rng.uniform() < p) {
        edges.emplace_back(u, v);
        isolated[u] = isolated[v] = 0;
      }
    }
  // attach stray isolated nodes to a same-class peer so every node has an edge
  for (int u = 0; u < n; ++u) {
    if (!isolated[u]) continue;
    int tries = 0;
    while (tries++ < 64) {
      int v = static_cast<int>(rng.below(n));
      if (v != u && g.labels[v] == g.labels[u]) {
        edges.emplace_back(std::min(u, v), std::max(u, v));
        isolated[u] = 0;
        break;
      }
    }
    if (isolated[u]) edges.emplace_back(std::min(u, (u + 1) % n), std::max(u, (u + 1) % n));
  }

  g.adjacency = build_symmetric_adjacency(n, edges, {});
  return g;
}

// Writes a graph as a dataset directory in the documented on-disk format.
inline void write_dataset(const AttributedGraph& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream meta(dir / "meta.json");
    meta << "{\"n_nodes\": " << g.n_nodes << ", \"n_features\": " << g.n_features
         << ", \"n_classes\": " << g.n_classes << "}\n";
  }
  {
    std::ofstream feats(dir / "features.csv");
    feats.precision(17);
    for (int i = 0; i < g.n_nodes; ++i) {
      for (int j = 0; j < g.n_features; ++j) {
        if (j) feats << ',';
        feats << g.features(i, j);
      }
      feats << '\n';
    }
  }
  {
    std::ofstream edges(dir / "edges.csv");
    edges.precision(17);
    for (int k = 0; k < g.adjacency.outerSize(); ++k)
      for (SpMat::InnerIterator it(g.adjacency, k); it; ++it) {
        if (it.row() >= it.col()) continue;
        edges << it.row() << ',' << it.col();
        if (it.value() != 1.0) edges << ',' << it.value();
        edges << '\n';
      }
  }
  if (g.has_labels()) {
    std::ofstream labels(dir / "labels.csv");
    for (int l : g.labels) labels << l << '\n';
  }
}

}  // namespace mpccl
