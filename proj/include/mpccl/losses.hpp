#pragma once

#include "mpccl/common.hpp"
#include "mpccl/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

namespace mpccl {

constexpr double kKlFloor = 1e-12;

// Exp-scaled cosine similarities between two embedding sets. Rows are
// L2-normalized; zero rows normalize to zero and are flagged. S21 is the
// transpose of S12 and is not stored; the cosine Grams are kept because the
// Laplacian regularizer reuses them.
struct SimilarityTensor {
  Mat S11, S22, S12;
  Mat G11, G22;  // Zt1 Zt1^T and Zt2 Zt2^T
  double tau = 0.5;
  Mat Zt1, Zt2;      // normalized rows
  Vec norm1, norm2;  // original row norms (0 for zero rows)
  bool had_zero_row = false;
};

namespace detail {

inline void exp_scaled(const Mat& gram, double tau, Mat& out) {
  const Eigen::Index n = gram.rows(), m = gram.cols();
  out.resize(n, m);
#pragma omp parallel for schedule(static)
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < n; ++i) out(i, j) = std::exp(gram(i, j) / tau);
}

}  // namespace detail

inline SimilarityTensor similarity_matrices(const Mat& z1, const Mat& z2, double tau) {
  if (!(tau > 0.0)) throw ConfigError("similarity_matrices: tau must be positive");
  if (z1.rows() != z2.rows()) throw ContractViolation("similarity_matrices: row mismatch");
  SimilarityTensor t;
  t.tau = tau;
  auto normalize = [&t](const Mat& z, Mat& out, Vec& norms) {
    out = z;
    norms = z.rowwise().norm();
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      if (norms(i) > 0.0)
        out.row(i) /= norms(i);
      else
        t.had_zero_row = true;
    }
  };
  normalize(z1, t.Zt1, t.norm1);
  normalize(z2, t.Zt2, t.norm2);
  t.G11.noalias() = t.Zt1 * t.Zt1.transpose();
  t.G22.noalias() = t.Zt2 * t.Zt2.transpose();
  Mat g12 = t.Zt1 * t.Zt2.transpose();
  detail::exp_scaled(t.G11, tau, t.S11);
  detail::exp_scaled(t.G22, tau, t.S22);
  detail::exp_scaled(g12, tau, t.S12);
  return t;
}

namespace detail {

// d(normalized rows)/d(raw rows): projects out the radial component.
inline Mat normalize_rows_backward(const Mat& zt, const Vec& norms, const Mat& dZt) {
  Mat dz = Mat::Zero(dZt.rows(), dZt.cols());
  for (Eigen::Index i = 0; i < dZt.rows(); ++i) {
    if (norms(i) <= 0.0) continue;
    double radial = zt.row(i).dot(dZt.row(i));
    dz.row(i) = (dZt.row(i) - radial * zt.row(i)) / norms(i);
  }
  return dz;
}

// Tr(Zt^T L_norm Zt) for one view with S = exp(G/tau) strictly positive and
// symmetric; optionally accumulates the exact gradient w.r.t. Zt (through S
// and the degrees too). F = sum_ij S_ij G_ij r_i r_j with r = d^{-1/2}.
inline double lap_reg_view(const Mat& s, const Mat& gram, const Mat& zt, double tau, Mat* dZt) {
  const Eigen::Index n = s.rows();
  Vec deg = s.colwise().sum().transpose();  // row sums via symmetry
  if ((deg.array() <= 0.0).any()) throw NumericsError("laplacian_reg: zero degree");
  Vec r = deg.cwiseSqrt().cwiseInverse();

  Vec srow(n);  // srow_k = sum_j S_kj G_kj r_j, read down column k via symmetry
#pragma omp parallel for schedule(static)
  for (Eigen::Index k = 0; k < n; ++k) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) acc += s(i, k) * gram(i, k) * r(i);
    srow(k) = acc;
  }
  double f = srow.dot(r);
  double value = zt.squaredNorm() - f;

  if (dZt) {
    Vec dbar = (-deg.array().pow(-1.5) * srow.array()).matrix();
    Mat gbar(n, n);
#pragma omp parallel for schedule(static)
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i) {
        double rr = r(i) * r(j);
        gbar(i, j) = s(i, j) * (rr + (gram(i, j) * rr + dbar(i)) / tau);
      }
    // d value/dZt = 2 Zt - (gbar + gbar^T) Zt
    dZt->noalias() += 2.0 * zt - gbar * zt - gbar.transpose() * zt;
  }
  return value;
}

}  // namespace detail

// Tr(Zt^T (I - D^{-1/2} S D^{-1/2}) Zt) for one intra-view similarity matrix.
inline double laplacian_reg_view(const Mat& s, const Mat& zt, double tau) {
  Mat gram = (s.array().log() * tau).matrix();
  return detail::lap_reg_view(s, gram, zt, tau, nullptr);
}

// (L_lap^(1) + L_lap^(2)) / (2N)
inline double laplacian_reg(const SimilarityTensor& sim) {
  const double n = static_cast<double>(sim.Zt1.rows());
  return (detail::lap_reg_view(sim.S11, sim.G11, sim.Zt1, sim.tau, nullptr) +
          detail::lap_reg_view(sim.S22, sim.G22, sim.Zt2, sim.tau, nullptr)) /
         (2.0 * n);
}

struct ContrastiveResult {
  double total = 0.0;       // L_cont + lambda_reg * L_lap
  double l_forward = 0.0;   // view-1 anchored direction
  double l_mirrored = 0.0;  // view-2 anchored direction
  double l_lap = 0.0;
  Mat dZ1, dZ2;  // gradients w.r.t. the raw (pre-normalization) embeddings
  Mat dC1, dC2;  // gradients w.r.t. the view-1 / view-2 k-means centroids
};

// One-to-many contrastive loss with cluster-centroid positives plus the
// Laplacian regularizer. km2 clusters the normalized view-2 embeddings and
// supplies positives for view-1 anchors; km1 mirrors it. Setting
// centroid_positives=false reduces the loss to plain one-to-one contrast.
//
// The gradient assembles diagonal-scaled products with the stored similarity
// matrices directly; no N x N temporaries are formed.
inline ContrastiveResult one_to_many_contrastive(const SimilarityTensor& sim,
                                                 const KmeansResult& km1,
                                                 const KmeansResult& km2, double lambda_reg,
                                                 double eps, bool centroid_positives = true) {
  if (!(eps > 0.0)) throw ConfigError("one_to_many_contrastive: eps must be positive");
  const Eigen::Index n = sim.Zt1.rows();
  const double tau = sim.tau;
  const Eigen::Index hz = sim.Zt1.cols();

  Vec sc1 = Vec::Zero(n), sc2 = Vec::Zero(n);
  if (centroid_positives) {
    for (Eigen::Index i = 0; i < n; ++i) {
      sc1(i) = std::exp(sim.Zt1.row(i).dot(km2.centroids.row(km2.labels[i])) / tau);
      sc2(i) = std::exp(sim.Zt2.row(i).dot(km1.centroids.row(km1.labels[i])) / tau);
    }
  }

  Vec row11 = sim.S11.colwise().sum().transpose();  // symmetric
  Vec row22 = sim.S22.colwise().sum().transpose();
  Vec row12 = sim.S12.rowwise().sum();
  Vec col12 = sim.S12.colwise().sum().transpose();
  Vec d11 = sim.S11.diagonal(), d22 = sim.S22.diagonal(), d12 = sim.S12.diagonal();

  Vec pos1 = d12 + sc1;
  Vec neg1 = row11 + row12 - d11 + Vec::Constant(n, eps);
  Vec pos2 = d12 + sc2;  // s_ii^(21) = s_ii^(12)
  Vec neg2 = row22 + col12 - d22 + Vec::Constant(n, eps);

  ContrastiveResult res;
  const double invn = 1.0 / static_cast<double>(n);
  res.l_forward = invn * (neg1.array().log() - pos1.array().log()).sum();
  res.l_mirrored = invn * (neg2.array().log() - pos2.array().log()).sum();

  // coefficient vectors of d loss / d entry
  Vec u1 = invn * neg1.cwiseInverse();
  Vec w1 = invn * pos1.cwiseInverse();
  Vec u2 = invn * neg2.cwiseInverse();
  Vec w2 = invn * pos2.cwiseInverse();

  // d/dS11 is u1_i off the diagonal (zero on it); d/dS12 is u1_i + u2_j with
  // the positive-pair pull subtracted on the diagonal. Batched as
  // S * [Zt | diag(u) Zt] products plus diagonal corrections.
  Mat rhs1(n, 2 * hz), rhs2(n, 2 * hz);
  rhs1.leftCols(hz) = sim.Zt1;
  rhs1.rightCols(hz) = u1.asDiagonal() * sim.Zt1;
  rhs2.leftCols(hz) = sim.Zt2;
  rhs2.rightCols(hz) = u2.asDiagonal() * sim.Zt2;

  Mat p11 = sim.S11 * rhs1;
  Mat p22 = sim.S22 * rhs2;
  Mat p12 = sim.S12 * rhs2;
  Mat p21 = sim.S12.transpose() * rhs1;

  Vec wd12 = (w1 + w2).cwiseProduct(d12);
  Mat dZt1 = (u1.asDiagonal() * (p11.leftCols(hz) + p12.leftCols(hz)) + p11.rightCols(hz) +
              p12.rightCols(hz) - 2.0 * (u1.cwiseProduct(d11)).asDiagonal() * sim.Zt1 -
              wd12.asDiagonal() * sim.Zt2) /
             tau;
  Mat dZt2 = (u2.asDiagonal() * (p22.leftCols(hz) + p21.leftCols(hz)) + p22.rightCols(hz) +
              p21.rightCols(hz) - 2.0 * (u2.cwiseProduct(d22)).asDiagonal() * sim.Zt2 -
              wd12.asDiagonal() * sim.Zt1) /
             tau;

  res.dC1 = Mat::Zero(km1.centroids.rows(), km1.centroids.cols());
  res.dC2 = Mat::Zero(km2.centroids.rows(), km2.centroids.cols());
  if (centroid_positives) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double a1 = -w1(i) * sc1(i) / tau;
      dZt1.row(i) += a1 * km2.centroids.row(km2.labels[i]);
      res.dC2.row(km2.labels[i]) += a1 * sim.Zt1.row(i);
      double a2 = -w2(i) * sc2(i) / tau;
      dZt2.row(i) += a2 * km1.centroids.row(km1.labels[i]);
      res.dC1.row(km1.labels[i]) += a2 * sim.Zt2.row(i);
    }
  }

  double lap1 = 0.0, lap2 = 0.0;
  if (lambda_reg != 0.0) {
    double lap_scale = lambda_reg / (2.0 * n);
    Mat lap_d1 = Mat::Zero(n, hz), lap_d2 = Mat::Zero(n, hz);
    lap1 = detail::lap_reg_view(sim.S11, sim.G11, sim.Zt1, tau, &lap_d1);
    lap2 = detail::lap_reg_view(sim.S22, sim.G22, sim.Zt2, tau, &lap_d2);
    dZt1 += lap_scale * lap_d1;
    dZt2 += lap_scale * lap_d2;
  } else {
    lap1 = detail::lap_reg_view(sim.S11, sim.G11, sim.Zt1, tau, nullptr);
    lap2 = detail::lap_reg_view(sim.S22, sim.G22, sim.Zt2, tau, nullptr);
  }
  res.l_lap = (lap1 + lap2) / (2.0 * n);

  res.total = res.l_forward + res.l_mirrored + lambda_reg * res.l_lap;
  res.dZ1 = detail::normalize_rows_backward(sim.Zt1, sim.norm1, dZt1);
  res.dZ2 = detail::normalize_rows_backward(sim.Zt2, sim.norm2, dZt2);
  return res;
}

// ---------------------------------------------------------------------------
// Student-t soft assignments and KL clustering losses
// ---------------------------------------------------------------------------

struct SoftAssign {
  Mat Q;      // n x m row-stochastic
  Mat T;      // t_ij = 1 + ||z_i - mu_j||^2 / v
  Vec sigma;  // row sums of the kernel
  double v = 1.0;
};

inline SoftAssign soft_assign_full(const Mat& h, const Mat& mu, double v) {
  if (mu.rows() < 1) throw DomainError("soft_assign: no centroids");
  if (!(v > 0.0)) throw ConfigError("soft_assign: v must be positive");
  const Eigen::Index n = h.rows(), m = mu.rows();
  Mat t(n, m);
  Vec hn = h.rowwise().squaredNorm();
  Vec mn = mu.rowwise().squaredNorm();
  Mat cross = h * mu.transpose();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      t(i, j) = 1.0 + std::max(0.0, hn(i) + mn(j) - 2.0 * cross(i, j)) / v;
  SoftAssign sa;
  sa.v = v;
  sa.T = t;
  Mat u = t.array().pow(-(v + 1.0) / 2.0).matrix();
  sa.sigma = u.rowwise().sum();
  sa.Q = (u.array().colwise() / sa.sigma.array()).matrix();
  return sa;
}

inline Mat soft_assign(const Mat& h, const Mat& mu, double v) {
  return soft_assign_full(h, mu, v).Q;
}

// Backward through the row-normalized Student-t kernel: given dL/dQ,
// accumulates dL/dH and dL/dMu.
inline void soft_assign_backward(const Mat& h, const Mat& mu, const SoftAssign& sa,
                                 const Mat& dQ, Mat& dH, Mat& dMu) {
  const double v = sa.v;
  // normalization backward: ubar_ij = (dq_ij - sum_l dq_il q_il) / sigma_i
  Vec dot = (dQ.cwiseProduct(sa.Q)).rowwise().sum();
  Mat ubar = ((dQ.colwise() - dot).array().colwise() / sa.sigma.array()).matrix();
  // du_ij/dmu_j = (v+1)/v * t_ij^{-(v+3)/2} * (z_i - mu_j) = -du_ij/dz_i
  Mat w = ubar.cwiseProduct(sa.T.array().pow(-(v + 3.0) / 2.0).matrix()) * ((v + 1.0) / v);
  Vec wrow = w.rowwise().sum();
  Vec wcol = w.colwise().sum().transpose();
  dH.noalias() += -(wrow.asDiagonal() * h) + w * mu;
  dMu.noalias() += w.transpose() * h - wcol.asDiagonal() * mu;
}

// p_ij = (q_ij^2 / f_j) / sum_j' (q_ij'^2 / f_j') with f_j the soft cluster
// frequency. Clusters with identically zero columns are excluded.
inline Mat target_distribution(const Mat& q, bool* had_empty_cluster = nullptr) {
  Vec f = q.colwise().sum().transpose();
  if (had_empty_cluster) *had_empty_cluster = false;
  Mat num(q.rows(), q.cols());
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (f(j) > 0.0) {
      num.col(j) = q.col(j).cwiseAbs2() / f(j);
    } else {
      num.col(j).setZero();
      if (had_empty_cluster) *had_empty_cluster = true;
    }
  }
  Vec rowsum = num.rowwise().sum();
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    if (rowsum(i) > 0.0) num.row(i) /= rowsum(i);
  return num;
}

inline double kl_divergence(const Mat& p, const Mat& q) {
  double out = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      double pij = p(i, j);
      if (pij <= 0.0) continue;
      out += pij * (std::log(std::max(pij, kKlFloor)) - std::log(std::max(q(i, j), kKlFloor)));
    }
  return out;
}

struct ClusteringLoss {
  double total = 0.0;
  double kl_target_q1 = 0.0;
  double kl_target_q2 = 0.0;
  double kl_consistency = 0.0;
};

// L_clu = KL(Pt||Q1) + KL(Pt||Q2) + KL(Q1||Q2)
inline ClusteringLoss clustering_loss(const Mat& q1, const Mat& q2, const Mat& pt) {
  if (q1.rows() != q2.rows() || q1.cols() != q2.cols() || q1.rows() != pt.rows() ||
      q1.cols() != pt.cols())
    throw ContractViolation("clustering_loss: shape mismatch");
  ClusteringLoss l;
  l.kl_target_q1 = kl_divergence(pt, q1);
  l.kl_target_q2 = kl_divergence(pt, q2);
  l.kl_consistency = kl_divergence(q1, q2);
  l.total = l.kl_target_q1 + l.kl_target_q2 + l.kl_consistency;
  return l;
}

// Partials of L_clu w.r.t. the Q entries, target distribution held fixed.
inline void clustering_loss_grads(const Mat& q1, const Mat& q2, const Mat& pt, Mat& dQ1,
                                  Mat& dQ2) {
  dQ1.resize(q1.rows(), q1.cols());
  dQ2.resize(q2.rows(), q2.cols());
  for (Eigen::Index i = 0; i < q1.rows(); ++i)
    for (Eigen::Index j = 0; j < q1.cols(); ++j) {
      double a = std::max(q1(i, j), kKlFloor);
      double b = std::max(q2(i, j), kKlFloor);
      double p = pt(i, j);
      dQ1(i, j) = -p / a + std::log(a / b) + 1.0;
      dQ2(i, j) = -p / b - a / b;
    }
}

// Closed-form gradient of L_clu w.r.t. the centroids, assembled directly
// from the kernel derivative and the KL partials in plain scalar loops.
// Kept deliberately independent of the vectorized backward path.
inline Mat centroid_gradient(const Mat& h1, const Mat& h2, const Mat& mu, double v,
                             const Mat& pt) {
  const Eigen::Index n = h1.rows(), m = mu.rows();
  SoftAssign sa1 = soft_assign_full(h1, mu, v);
  SoftAssign sa2 = soft_assign_full(h2, mu, v);
  Mat grad = Mat::Zero(m, mu.cols());

  for (int view = 1; view <= 2; ++view) {
    const SoftAssign& sa = view == 1 ? sa1 : sa2;
    const Mat& h = view == 1 ? h1 : h2;
    for (Eigen::Index i = 0; i < n; ++i) {
      double corr = 0.0;  // sum_j a_ij q_ij (normalizer coupling)
      Vec a(m);
      for (Eigen::Index j = 0; j < m; ++j) {
        double q1v = std::max(sa1.Q(i, j), kKlFloor);
        double q2v = std::max(sa2.Q(i, j), kKlFloor);
        a(j) = view == 1 ? -pt(i, j) / q1v + std::log(q1v / q2v) + 1.0
                         : -pt(i, j) / q2v - q1v / q2v;
        corr += a(j) * sa.Q(i, j);
      }
      for (Eigen::Index l = 0; l < m; ++l) {
        double du = (v + 1.0) / v * std::pow(sa.T(i, l), -(v + 3.0) / 2.0);
        double coef = (a(l) - corr) / sa.sigma(i) * du;
        grad.row(l) += coef * (h.row(i) - mu.row(l));
      }
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Graph reconstruction
// ---------------------------------------------------------------------------

struct ReconstructionResult {
  double loss = 0.0;
  Mat a_hat;  // sigmoid(H H^T), symmetric
};

inline ReconstructionResult reconstruction_loss(const Mat& h, const SpMat& a) {
  const Eigen::Index n = h.rows();
  if (a.rows() != n || a.cols() != n)
    throw ContractViolation("reconstruction_loss: shape mismatch");
  ReconstructionResult r;
  Mat m = Mat::Zero(n, n);
  m.selfadjointView<Eigen::Lower>().rankUpdate(h);
  r.a_hat.resize(n, n);
  Vec col_loss = Vec::Zero(n);  // per-column partials for a deterministic sum
#pragma omp parallel for schedule(static)
  for (Eigen::Index j = 0; j < n; ++j) {
    double acc = 0.0;
    for (Eigen::Index i = j; i < n; ++i) {
      double s = 1.0 / (1.0 + std::exp(-m(i, j)));
      r.a_hat(i, j) = s;
      r.a_hat(j, i) = s;
      acc += (i == j ? 1.0 : 2.0) * s * s;  // (0 - s)^2 assuming a non-edge
    }
    col_loss(j) = acc;
  }
  double loss = col_loss.sum();
  // correct the entries that are actual edges
  for (int k = 0; k < a.outerSize(); ++k)
    for (SpMat::InnerIterator it(a, k); it; ++it) {
      double s = r.a_hat(it.row(), it.col());
      double d = it.value() - s;
      loss += d * d - s * s;
    }
  r.loss = loss;
  return r;
}

// dL/dH for the Frobenius reconstruction error. A and a_hat are symmetric,
// so the gradient collapses to 2 * Mbar * H with Mbar = -2 (A - Ahat)
// .* Ahat .* (1 - Ahat).
inline Mat reconstruction_backward(const Mat& h, const SpMat& a, const Mat& a_hat) {
  const Eigen::Index n = h.rows();
  Mat mbar(n, n);
#pragma omp parallel for schedule(static)
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) {
      double s = a_hat(i, j);
      mbar(i, j) = 2.0 * s * s * (1.0 - s);
    }
  for (int k = 0; k < a.outerSize(); ++k)
    for (SpMat::InnerIterator it(a, k); it; ++it) {
      double s = a_hat(it.row(), it.col());
      mbar(it.row(), it.col()) -= 2.0 * it.value() * s * (1.0 - s);
    }
  return 2.0 * (mbar * h);
}

inline double total_loss(double contrast, double clustering, double reconstruction, double alpha,
                         double beta, double gamma) {
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
    throw ConfigError("total_loss: weights must be nonnegative");
  return alpha * contrast + beta * clustering + gamma * reconstruction;
}

}  // namespace mpccl
