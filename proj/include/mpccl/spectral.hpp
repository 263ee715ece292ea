#pragma once

#include "mpccl/coarsen.hpp"
#include "mpccl/common.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

namespace mpccl {

// Disjoint node-index blocks covering [0, n).
struct Partition {
  std::vector<std::vector<int>> blocks;

  int n_blocks() const { return static_cast<int>(blocks.size()); }

  int covered_nodes() const {
    int n = 0;
    for (const auto& b : blocks) n += static_cast<int>(b.size());
    return n;
  }

  static Partition from_merge_map(const MergeMap& m, int n_coarse) {
    Partition p;
    p.blocks.resize(n_coarse);
    for (int u = 0; u < static_cast<int>(m.assignment.size()); ++u)
      p.blocks[m.assignment[u]].push_back(u);
    return p;
  }
};

// P[u][i] = 1/sqrt(|C_i|) for u in block C_i, else 0. Columns orthonormal.
inline Mat projection_matrix(const Partition& partition, int n) {
  Mat p = Mat::Zero(n, partition.n_blocks());
  std::vector<char> seen(n, 0);
  for (int i = 0; i < partition.n_blocks(); ++i) {
    const auto& block = partition.blocks[i];
    if (block.empty()) throw DomainError("projection_matrix: empty block");
    double val = 1.0 / std::sqrt(static_cast<double>(block.size()));
    for (int u : block) {
      if (u < 0 || u >= n || seen[u]) throw DomainError("projection_matrix: invalid partition");
      seen[u] = 1;
      p(u, i) = val;
    }
  }
  for (int u = 0; u < n; ++u)
    if (!seen[u]) throw DomainError("projection_matrix: partition does not cover all nodes");
  return p;
}

// Full spectrum of a symmetric matrix, ascending.
inline Vec eigenvalues(const Mat& l) {
  if (l.rows() != l.cols() || !is_symmetric(l, 1e-9))
    throw DomainError("eigenvalues: input not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(l, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericsError("eigenvalues: solver failed");
  return es.eigenvalues();
}

inline Mat coarsened_laplacian(const Mat& l, const Mat& p) {
  if (l.rows() != p.rows()) throw ContractViolation("coarsened_laplacian: dimension mismatch");
  return p.transpose() * l * p;
}

struct SpectralReport {
  Vec eigs_original;
  Vec eigs_coarse;
  double kappa_original = 0.0;
  double kappa_coarse = 0.0;
  bool interlacing_ok = false;
  bool condition_ok = false;
  bool weyl_ok = false;
  double spectral_error = 0.0;  // ||L - P L' P^T||_2
  double intra_bound = 0.0;     // eta^2 * W_intra
  double eta = 0.0;
  double intra_weight = 0.0;
  bool connected = true;
};

namespace detail {

// lambda_max / lambda_min^+ with lambda_min^+ = lambda_2
inline double condition_number(const Vec& eigs) {
  const int n = static_cast<int>(eigs.size());
  if (n < 2) return 0.0;
  double lmin_pos = eigs(1);
  double lmax = eigs(n - 1);
  if (lmin_pos <= 0.0) return std::numeric_limits<double>::infinity();
  return lmax / lmin_pos;
}

}  // namespace detail

// Checks eigenvalue interlacing, condition-number contraction, and the Weyl
// bound for the projected Laplacian L' = P^T L P. W_intra is the total weight
// of edges inside partition blocks (read off L), eta is supplied by the
// caller; the eta^2 * W_intra bound is reported, never asserted.
inline SpectralReport verify_theorems(const Mat& l, const Partition& partition,
                                      double eta = 0.0, double tol = 1e-8) {
  const int n = static_cast<int>(l.rows());
  Mat p = projection_matrix(partition, n);
  Mat lc = coarsened_laplacian(l, p);

  SpectralReport rep;
  rep.eigs_original = eigenvalues(l);
  rep.eigs_coarse = eigenvalues((lc + lc.transpose()) / 2.0);
  rep.kappa_original = detail::condition_number(rep.eigs_original);
  rep.kappa_coarse = detail::condition_number(rep.eigs_coarse);
  double scale = std::max(1.0, std::abs(rep.eigs_original(n - 1)));
  rep.connected = n < 2 || rep.eigs_original(1) > tol * scale;

  rep.interlacing_ok = true;
  for (int k = 0; k < rep.eigs_coarse.size(); ++k)
    if (rep.eigs_original(k) > rep.eigs_coarse(k) + tol) rep.interlacing_ok = false;

  rep.condition_ok = rep.kappa_coarse <= rep.kappa_original + tol;

  Mat lifted = p * lc * p.transpose();
  Mat diff = l - lifted;
  Vec diff_eigs = eigenvalues((diff + diff.transpose()) / 2.0);
  rep.spectral_error = std::max(std::abs(diff_eigs(0)), std::abs(diff_eigs(n - 1)));

  Vec lifted_eigs = eigenvalues((lifted + lifted.transpose()) / 2.0);
  rep.weyl_ok = true;
  for (int i = 0; i < n; ++i)
    if (std::abs(rep.eigs_original(i) - lifted_eigs(i)) > rep.spectral_error + tol)
      rep.weyl_ok = false;

  // total intra-block edge weight from the off-diagonal of L
  std::vector<int> block_of(n, -1);
  for (int i = 0; i < partition.n_blocks(); ++i)
    for (int u : partition.blocks[i]) block_of[u] = i;
  double w_intra = 0.0;
  for (int u = 0; u < n; ++u)
    for (int v = u + 1; v < n; ++v)
      if (block_of[u] == block_of[v]) w_intra += -l(u, v);
  rep.intra_weight = w_intra;
  rep.eta = eta;
  rep.intra_bound = eta * eta * w_intra;
  return rep;
}

// Constructs the block-constant-weight graph of Assumption 1: complete
// within each block at intra_weight, complete between blocks i and j at
// k_ij. Returns the graph with its generating partition.
inline std::pair<WeightedGraph, Partition> synth_assumption1_graph(
    const std::vector<int>& block_sizes, const Mat& inter_weights, double intra_weight) {
  const int nb = static_cast<int>(block_sizes.size());
  if (inter_weights.rows() != nb || inter_weights.cols() != nb)
    throw DomainError("synth_assumption1_graph: inter_weights must be n_blocks x n_blocks");
  if (!is_symmetric(inter_weights, 0.0) || inter_weights.minCoeff() < 0.0)
    throw DomainError("synth_assumption1_graph: inter_weights must be symmetric nonnegative");
  if (intra_weight < 0.0) throw DomainError("synth_assumption1_graph: negative intra weight");

  Partition part;
  int n = 0;
  for (int s : block_sizes) {
    if (s < 1) throw DomainError("synth_assumption1_graph: block size must be >= 1");
    std::vector<int> block(s);
    std::iota(block.begin(), block.end(), n);
    part.blocks.push_back(std::move(block));
    n += s;
  }

  WeightedGraph g = WeightedGraph::empty(n);
  for (int i = 0; i < nb; ++i) {
    const auto& bi = part.blocks[i];
    if (intra_weight > 0.0)
      for (size_t a = 0; a < bi.size(); ++a)
        for (size_t b = a + 1; b < bi.size(); ++b) g.add_edge(bi[a], bi[b], intra_weight);
    for (int j = i + 1; j < nb; ++j) {
      double w = inter_weights(i, j);
      if (w <= 0.0) continue;
      for (int u : bi)
        for (int v : part.blocks[j]) g.add_edge(u, v, w);
    }
  }
  g.sort_neighbors();
  return {std::move(g), std::move(part)};
}

}  // namespace mpccl
