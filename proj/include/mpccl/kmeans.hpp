#pragma once

#include "mpccl/common.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace mpccl {

struct KmeansResult {
  Mat centroids;           // m x dim
  std::vector<int> labels; // per row of the input
  double inertia = 0.0;
  int iterations = 0;
};

namespace detail {

inline void assign_nearest(const Mat& z, const Mat& c, std::vector<int>& labels, Vec& dist2) {
  const int n = static_cast<int>(z.rows());
  const int m = static_cast<int>(c.rows());
  Vec cn = c.rowwise().squaredNorm();
  Vec zn = z.rowwise().squaredNorm();
  Mat cross = z * c.transpose();  // n x m
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double bestd = std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j) {
      double d = zn(i) + cn(j) - 2.0 * cross(i, j);
      if (d < bestd) {
        bestd = d;
        best = j;
      }
    }
    labels[i] = best;
    dist2(i) = std::max(0.0, bestd);
  }
}

inline Mat kmeanspp_seed(const Mat& z, int m, Rng& rng) {
  const int n = static_cast<int>(z.rows());
  Mat c(m, z.cols());
  int first = static_cast<int>(rng.below(n));
  c.row(0) = z.row(first);
  Vec d2 = (z.rowwise() - c.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < m; ++j) {
    double total = d2.sum();
    int pick;
    if (total <= 0.0) {
      pick = static_cast<int>(rng.below(n));
    } else {
      double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    }
    c.row(j) = z.row(pick);
    Vec nd = (z.rowwise() - c.row(j)).rowwise().squaredNorm();
    d2 = d2.cwiseMin(nd);
  }
  return c;
}

}  // namespace detail

// Lloyd iterations with k-means++ seeding; best of `restarts` runs by
// inertia. Empty clusters are re-seeded from the point farthest from its
// centroid. Converges when assignments stop changing.
inline KmeansResult kmeans_cluster(const Mat& z, int m, std::uint64_t seed, int restarts = 1,
                                   int max_iters = 100, const Mat* warm_start = nullptr) {
  const int n = static_cast<int>(z.rows());
  if (m < 1) throw DomainError("kmeans: m must be >= 1");
  if (m > n) throw DomainError("kmeans: m exceeds number of points");

  Rng base(seed);
  KmeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();

  for (int run = 0; run < std::max(1, restarts); ++run) {
    Rng rng = base.fork(run);
    Mat c = (run == 0 && warm_start && warm_start->rows() == m && warm_start->cols() == z.cols())
                ? *warm_start
                : detail::kmeanspp_seed(z, m, rng);
    std::vector<int> labels(n, -1), prev(n, -2);
    Vec dist2(n);
    int iter = 0;
    for (; iter < max_iters; ++iter) {
      detail::assign_nearest(z, c, labels, dist2);
      if (labels == prev) break;
      prev = labels;
      Mat sums = Mat::Zero(m, z.cols());
      std::vector<int> counts(m, 0);
      for (int i = 0; i < n; ++i) {
        sums.row(labels[i]) += z.row(i);
        ++counts[labels[i]];
      }
      for (int j = 0; j < m; ++j) {
        if (counts[j] > 0) {
          c.row(j) = sums.row(j) / counts[j];
        } else {
          int far = 0;
          dist2.maxCoeff(&far);
          c.row(j) = z.row(far);
          dist2(far) = 0.0;
        }
      }
    }
    detail::assign_nearest(z, c, labels, dist2);
    double inertia = dist2.sum();
    if (inertia < best.inertia) {
      best.centroids = c;
      best.labels = labels;
      best.inertia = inertia;
      best.iterations = iter;
    }
  }
  return best;
}

}  // namespace mpccl
