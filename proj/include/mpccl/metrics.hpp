#pragma once

#include "mpccl/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace mpccl {

struct MetricsReport {
  double acc = 0.0;
  double nmi = 0.0;
  double ari = 0.0;
  double f1 = 0.0;
  int n_samples = 0;
  std::vector<int> mapping;  // cluster id -> class id used for ACC/F1
};

namespace detail {

// Maximum-weight assignment on a square cost matrix via the Hungarian
// algorithm with potentials (O(n^3)). Returns row -> column.
inline std::vector<int> hungarian_max(const Mat& weight) {
  const int n = static_cast<int>(weight.rows());
  Mat cost = -weight;  // minimize
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

inline double entropy_from_counts(const std::vector<long>& counts, long total) {
  double h = 0.0;
  for (long c : counts) {
    if (c <= 0) continue;
    double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return h;
}

inline double comb2(long n) { return 0.5 * static_cast<double>(n) * (n - 1); }

}  // namespace detail

// ACC via optimal cluster-to-class matching, NMI with arithmetic-mean
// normalization, ARI, and macro-F1 under the ACC-optimal mapping.
inline MetricsReport clustering_metrics(const std::vector<int>& pred,
                                        const std::vector<int>& truth) {
  if (pred.size() != truth.size()) throw ContractViolation("clustering_metrics: length mismatch");
  if (pred.empty()) throw DomainError("clustering_metrics: empty input");
  const long n = static_cast<long>(pred.size());
  int kp = 0, kt = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || truth[i] < 0) throw DomainError("clustering_metrics: negative label");
    kp = std::max(kp, pred[i] + 1);
    kt = std::max(kt, truth[i] + 1);
  }
  const int k = std::max(kp, kt);

  Mat cont = Mat::Zero(k, k);  // cont(cluster, class)
  for (long i = 0; i < n; ++i) cont(pred[i], truth[i]) += 1.0;

  MetricsReport rep;
  rep.n_samples = static_cast<int>(n);
  rep.mapping = detail::hungarian_max(cont);

  double matched = 0.0;
  for (int c = 0; c < k; ++c) matched += cont(c, rep.mapping[c]);
  rep.acc = matched / static_cast<double>(n);

  // NMI, natural log, arithmetic-mean normalization
  std::vector<long> a(k, 0), b(k, 0);
  for (long i = 0; i < n; ++i) {
    ++a[pred[i]];
    ++b[truth[i]];
  }
  double ha = detail::entropy_from_counts(a, n);
  double hb = detail::entropy_from_counts(b, n);
  double mi = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      double nij = cont(i, j);
      if (nij <= 0.0) continue;
      mi += nij / n * std::log(n * nij / (static_cast<double>(a[i]) * b[j]));
    }
  if (ha <= 0.0 && hb <= 0.0)
    rep.nmi = 1.0;  // both partitions trivial, hence identical
  else if (ha <= 0.0 || hb <= 0.0)
    rep.nmi = 0.0;
  else
    rep.nmi = mi / (0.5 * (ha + hb));

  // ARI
  double sum_ij = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) sum_ij += detail::comb2(static_cast<long>(cont(i, j)));
  double sum_a = 0.0, sum_b = 0.0;
  for (int i = 0; i < k; ++i) {
    sum_a += detail::comb2(a[i]);
    sum_b += detail::comb2(b[i]);
  }
  double total_pairs = detail::comb2(n);
  double expected = total_pairs > 0.0 ? sum_a * sum_b / total_pairs : 0.0;
  double maximum = 0.5 * (sum_a + sum_b);
  rep.ari = (maximum - expected) > 0.0 ? (sum_ij - expected) / (maximum - expected) : 1.0;

  // macro-F1 over classes present in the truth, after the ACC mapping
  double f1_sum = 0.0;
  int classes = 0;
  for (int cls = 0; cls < k; ++cls) {
    if (b[cls] == 0) continue;
    ++classes;
    double tp = 0.0, fp = 0.0;
    for (int c = 0; c < k; ++c) {
      if (rep.mapping[c] != cls) continue;
      tp += cont(c, cls);
      for (int j = 0; j < k; ++j)
        if (j != cls) fp += cont(c, j);
    }
    double fn = static_cast<double>(b[cls]) - tp;
    double denom = 2.0 * tp + fp + fn;
    f1_sum += denom > 0.0 ? 2.0 * tp / denom : 0.0;
  }
  rep.f1 = classes > 0 ? f1_sum / classes : 0.0;
  return rep;
}

}  // namespace mpccl
