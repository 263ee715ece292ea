#pragma once

#include "mpccl/common.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace mpccl {

// Node-attributed undirected graph. Adjacency is symmetric with a zero
// diagonal; read-only after construction.
struct AttributedGraph {
  int n_nodes = 0;
  int n_features = 0;
  int n_classes = 0;  // 0 when unknown
  Mat features;       // n_nodes x n_features
  SpMat adjacency;    // n_nodes x n_nodes
  std::vector<int> labels;  // empty when absent

  bool has_labels() const { return !labels.empty(); }
};

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline double parse_real(const std::string& s, const std::string& where) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw FormatError(where + ": trailing characters in '" + s + "'");
    return v;
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception&) {
    throw FormatError(where + ": cannot parse real '" + s + "'");
  }
}

inline long parse_int(const std::string& s, const std::string& where) {
  try {
    size_t pos = 0;
    long v = std::stol(s, &pos);
    if (pos != s.size()) throw FormatError(where + ": trailing characters in '" + s + "'");
    return v;
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception&) {
    throw FormatError(where + ": cannot parse integer '" + s + "'");
  }
}

}  // namespace detail

// Builds a symmetric sparse adjacency from undirected edge triples.
// Duplicate edges collapse to one (last weight wins), both directions stored.
inline SpMat build_symmetric_adjacency(int n, const std::vector<std::pair<int, int>>& edges,
                                       const std::vector<double>& weights) {
  std::map<std::pair<int, int>, double> uniq;
  for (size_t k = 0; k < edges.size(); ++k) {
    auto [u, v] = edges[k];
    if (u > v) std::swap(u, v);
    uniq[{u, v}] = weights.empty() ? 1.0 : weights[k];
  }
  std::vector<Triplet> trip;
  trip.reserve(uniq.size() * 2);
  for (const auto& [e, w] : uniq) {
    trip.emplace_back(e.first, e.second, w);
    trip.emplace_back(e.second, e.first, w);
  }
  SpMat a(n, n);
  a.setFromTriplets(trip.begin(), trip.end());
  return a;
}

inline void validate_graph(const AttributedGraph& g) {
  if (g.features.rows() != g.n_nodes || g.features.cols() != g.n_features)
    throw FormatError("feature matrix shape does not match meta");
  if (!g.features.allFinite()) throw FormatError("non-finite feature value");
  if (g.adjacency.rows() != g.n_nodes || g.adjacency.cols() != g.n_nodes)
    throw FormatError("adjacency shape does not match meta");
  for (int k = 0; k < g.adjacency.outerSize(); ++k) {
    for (SpMat::InnerIterator it(g.adjacency, k); it; ++it) {
      if (!std::isfinite(it.value()) || it.value() < 0.0)
        throw FormatError("adjacency entries must be finite and nonnegative");
      if (it.row() == it.col() && it.value() != 0.0)
        throw FormatError("self-loop in adjacency");
    }
  }
  SpMat diff = SpMat(g.adjacency.transpose()) - g.adjacency;
  for (int k = 0; k < diff.outerSize(); ++k)
    for (SpMat::InnerIterator it(diff, k); it; ++it)
      if (std::abs(it.value()) > 1e-12) throw FormatError("adjacency not symmetric");
  if (!g.labels.empty()) {
    if (static_cast<int>(g.labels.size()) != g.n_nodes)
      throw FormatError("label count does not match n_nodes");
    for (int l : g.labels)
      if (l < 0 || l >= g.n_classes) throw FormatError("label out of range [0, n_classes)");
  }
}

// Loads a dataset directory: meta.json, features.csv, edges.csv,
// optional labels.csv. Edge pairs are 0-indexed and undirected; comma or
// whitespace separated; an optional third column carries a weight.
inline AttributedGraph load_graph(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  auto require_file = [&](const char* name) {
    fs::path p = dir / name;
    if (!fs::exists(p)) throw IoError("missing file: " + p.string());
    return p;
  };

  AttributedGraph g;
  {
    std::ifstream in(require_file("meta.json"));
    nlohmann::json meta;
    try {
      in >> meta;
    } catch (const std::exception& e) {
      throw FormatError(std::string("meta.json: ") + e.what());
    }
    if (!meta.contains("n_nodes") || !meta.contains("n_features"))
      throw FormatError("meta.json must define n_nodes and n_features");
    g.n_nodes = meta["n_nodes"].get<int>();
    g.n_features = meta["n_features"].get<int>();
    g.n_classes = meta.value("n_classes", 0);
    if (g.n_nodes <= 0 || g.n_features <= 0) throw FormatError("meta.json: counts must be positive");
  }

  {
    std::ifstream in(require_file("features.csv"));
    g.features.resize(g.n_nodes, g.n_features);
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (row >= g.n_nodes) throw FormatError("features.csv: more rows than n_nodes");
      auto fields = detail::split_fields(line);
      if (static_cast<int>(fields.size()) != g.n_features)
        throw FormatError("features.csv row " + std::to_string(row) + ": expected " +
                          std::to_string(g.n_features) + " values, got " +
                          std::to_string(fields.size()));
      for (int j = 0; j < g.n_features; ++j)
        g.features(row, j) = detail::parse_real(fields[j], "features.csv");
      ++row;
    }
    if (row != g.n_nodes) throw FormatError("features.csv: fewer rows than n_nodes");
  }

  {
    std::ifstream in(require_file("edges.csv"));
    std::vector<std::pair<int, int>> edges;
    std::vector<double> weights;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto fields = detail::split_fields(line);
      if (fields.empty()) continue;
      if (fields.size() != 2 && fields.size() != 3)
        throw FormatError("edges.csv line " + std::to_string(lineno) + ": expected 'u,v[,w]'");
      long u = detail::parse_int(fields[0], "edges.csv");
      long v = detail::parse_int(fields[1], "edges.csv");
      if (u < 0 || v < 0 || u >= g.n_nodes || v >= g.n_nodes)
        throw FormatError("edges.csv line " + std::to_string(lineno) + ": node id out of range");
      if (u == v)
        throw FormatError("edges.csv line " + std::to_string(lineno) + ": self-loop rejected");
      double w = fields.size() == 3 ? detail::parse_real(fields[2], "edges.csv") : 1.0;
      if (!(w >= 0.0) || !std::isfinite(w))
        throw FormatError("edges.csv line " + std::to_string(lineno) + ": bad weight");
      edges.emplace_back(static_cast<int>(u), static_cast<int>(v));
      weights.push_back(w);
    }
    g.adjacency = build_symmetric_adjacency(g.n_nodes, edges, weights);
  }

  if (std::filesystem::exists(dir / "labels.csv")) {
    std::ifstream in(dir / "labels.csv");
    std::string line;
    while (std::getline(in, line)) {
      auto fields = detail::split_fields(line);
      if (fields.empty()) continue;
      if (fields.size() != 1) throw FormatError("labels.csv: one integer per line");
      g.labels.push_back(static_cast<int>(detail::parse_int(fields[0], "labels.csv")));
    }
    if (g.n_classes <= 0) throw FormatError("labels present but meta.json lacks n_classes");
  }

  validate_graph(g);
  return g;
}

// Renormalized symmetric adjacency: D^{-1/2} (A + I) D^{-1/2} with D the
// degree matrix of A + I. Isolated nodes pick up degree 1 from the self-loop.
inline SpMat normalize_adjacency(const SpMat& a) {
  const int n = static_cast<int>(a.rows());
  Vec deg = Vec::Ones(n);  // self-loop contribution
  for (int k = 0; k < a.outerSize(); ++k)
    for (SpMat::InnerIterator it(a, k); it; ++it) deg(it.row()) += it.value();
  Vec dinv_sqrt = deg.cwiseSqrt().cwiseInverse();

  std::vector<Triplet> trip;
  trip.reserve(a.nonZeros() + n);
  for (int k = 0; k < a.outerSize(); ++k)
    for (SpMat::InnerIterator it(a, k); it; ++it)
      trip.emplace_back(it.row(), it.col(), it.value() * dinv_sqrt(it.row()) * dinv_sqrt(it.col()));
  for (int i = 0; i < n; ++i) trip.emplace_back(i, i, dinv_sqrt(i) * dinv_sqrt(i));
  SpMat out(n, n);
  out.setFromTriplets(trip.begin(), trip.end());
  return out;
}

// Graph Laplacian L = D - W of a symmetric nonnegative weight matrix with
// zero diagonal. Returned dense; this library operates at desk scale.
inline Mat laplacian_matrix(const SpMat& w) {
  const int n = static_cast<int>(w.rows());
  Mat l = Mat::Zero(n, n);
  for (int k = 0; k < w.outerSize(); ++k) {
    for (SpMat::InnerIterator it(w, k); it; ++it) {
      if (it.row() == it.col()) {
        if (it.value() != 0.0) throw DomainError("laplacian: nonzero diagonal in weight matrix");
        continue;
      }
      if (it.value() < 0.0) throw DomainError("laplacian: negative off-diagonal weight");
      l(it.row(), it.col()) -= it.value();
      l(it.row(), it.row()) += it.value();
    }
  }
  return l;
}

}  // namespace mpccl
