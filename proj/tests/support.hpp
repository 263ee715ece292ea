#pragma once

#include "mpccl/common.hpp"
#include "mpccl/graph.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace testutil {

// Scratch directory wiped on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("mpccl_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
}

// Minimal dataset directory on disk.
inline std::filesystem::path write_tiny_dataset(const TempDir& dir, int n, int d, int k,
                                                const std::string& features,
                                                const std::string& edges,
                                                const std::string& labels = "") {
  write_file(dir.path / "meta.json", "{\"n_nodes\": " + std::to_string(n) +
                                         ", \"n_features\": " + std::to_string(d) +
                                         ", \"n_classes\": " + std::to_string(k) + "}\n");
  write_file(dir.path / "features.csv", features);
  write_file(dir.path / "edges.csv", edges);
  if (!labels.empty()) write_file(dir.path / "labels.csv", labels);
  return dir.path;
}

// Random symmetric binary graph with random nonnegative features.
inline mpccl::AttributedGraph random_graph(int n, int d, double edge_p, std::uint64_t seed) {
  mpccl::Rng rng(seed);
  mpccl::AttributedGraph g;
  g.n_nodes = n;
  g.n_features = d;
  g.features = mpccl::Mat::Zero(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) g.features(i, j) = rng.uniform();
  std::vector<std::pair<int, int>> edges;
  for (int u = 0; u < n; ++u)
    for (int v = u + 1; v < n; ++v)
      if (rng.uniform() < edge_p) edges.emplace_back(u, v);
  if (edges.empty() && n >= 2) edges.emplace_back(0, 1);
  g.adjacency = mpccl::build_symmetric_adjacency(n, edges, {});
  return g;
}

}  // namespace testutil
