#pragma once

#include "mpccl/coarsen.hpp"
#include "mpccl/common.hpp"
#include "mpccl/losses.hpp"
#include "mpccl/net.hpp"
#include "mpccl/synthetic.hpp"
#include "mpccl/trainer.hpp"

#include <chrono>
#include <functional>
#include <string>
#include <vector>

namespace mpccl {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_slot;
  long n_coordinates = 0;
  double seconds = 0.0;
  std::uint64_t seed_used = 0;
};

namespace detail {

// One full-loss evaluation with every stochastic cache frozen: augmentation
// mask, contrastive k-means clustering, and the target distribution are
// inputs here, so the loss is a smooth deterministic function of the
// parameters and centroids.
struct FrozenStep {
  const Mat* x;
  const Mat* x_aug;
  const ViewOperator* op1;
  const std::vector<ViewOperator>* view_ops;
  const SpMat* adjacency;
  KmeansResult km1, km2;
  Mat pt;
  double tau, lambda_reg, eps, dof_v;
  double alpha, beta, gamma;

  double loss(const ModelParams& p, const Mat& mu) const {
    ViewBundle vb = forward_views_normalized(*x, *x_aug, *op1, *view_ops, p);
    SimilarityTensor sims = similarity_matrices(vb.v1.Z, vb.Z2, tau);
    ContrastiveResult con = one_to_many_contrastive(sims, km1, km2, lambda_reg, eps);
    Mat q1 = soft_assign(vb.v1.H, mu, dof_v);
    Mat q2 = soft_assign(vb.H2, mu, dof_v);
    ClusteringLoss clu = clustering_loss(q1, q2, pt);
    ReconstructionResult rec = reconstruction_loss(vb.v1.H, *adjacency);
    return total_loss(con.total, clu.total, rec.loss, alpha, beta, gamma);
  }

  // analytic gradients via the production backward path
  void grads(const ModelParams& p, const Mat& mu, ParamGrads& g, Mat& dMu) const {
    ViewBundle vb = forward_views_normalized(*x, *x_aug, *op1, *view_ops, p);
    SimilarityTensor sims = similarity_matrices(vb.v1.Z, vb.Z2, tau);
    ContrastiveResult con = one_to_many_contrastive(sims, km1, km2, lambda_reg, eps);
    SoftAssign sa1 = soft_assign_full(vb.v1.H, mu, dof_v);
    SoftAssign sa2 = soft_assign_full(vb.H2, mu, dof_v);
    ReconstructionResult rec = reconstruction_loss(vb.v1.H, *adjacency);

    Mat dQ1, dQ2;
    clustering_loss_grads(sa1.Q, sa2.Q, pt, dQ1, dQ2);
    dQ1 *= beta;
    dQ2 *= beta;
    Mat dH1 = Mat::Zero(vb.v1.H.rows(), vb.v1.H.cols());
    Mat dH2 = Mat::Zero(vb.H2.rows(), vb.H2.cols());
    dMu = Mat::Zero(mu.rows(), mu.cols());
    soft_assign_backward(vb.v1.H, mu, sa1, dQ1, dH1, dMu);
    soft_assign_backward(vb.H2, mu, sa2, dQ2, dH2, dMu);
    dH1 += gamma * reconstruction_backward(vb.v1.H, *adjacency, rec.a_hat);
    Mat dZ1 = alpha * con.dZ1;
    Mat dZ2 = alpha * con.dZ2;
    g = backward(vb, p, *x, *x_aug, dZ1, dZ2, dH1, dH2);
  }
};

inline double kink_margin(const ViewBundle& vb) {
  double margin = vb.v1.Y.cwiseAbs().minCoeff();
  margin = std::min(margin, vb.v1.B.cwiseAbs().minCoeff());
  for (const auto& c : vb.v2) {
    margin = std::min(margin, c.Y.cwiseAbs().minCoeff());
    margin = std::min(margin, c.B.cwiseAbs().minCoeff());
  }
  return margin;
}

}  // namespace detail

// Compares every analytic parameter and centroid gradient of the total loss
// against central finite differences on a small random graph.
inline GradCheckReport run_gradcheck(std::uint64_t seed, int n = 30, int d = 12, int k = 3,
                                     std::vector<double> scales = {0.5, 0.25},
                                     double fd_step = 1e-5) {
  auto t_start = std::chrono::steady_clock::now();

  AttributedGraph g;
  ModelParams params;
  Mat mu;
  detail::FrozenStep step;
  std::vector<ViewOperator> view_ops;
  ViewOperator op1;
  Mat x_aug;
  Dims dims{d, 16, 12, 20, 10};
  std::uint64_t s = seed;

  // resample until all activation pre-images are clear of the ReLU/PReLU kinks
  for (int attempt = 0;; ++attempt, ++s) {
    if (attempt > 32) throw NumericsError("gradcheck: could not find a kink-free instance");
    SyntheticSpec spec;
    spec.n_nodes = n;
    spec.n_features = d;
    spec.n_classes = k;
    spec.topic_on = 0.5;
    spec.background_on = 0.1;
    spec.seed = s;
    g = make_planted_graph(spec);

    Rng rng = Rng(s).fork(11);
    params = ModelParams::glorot(dims, rng);
    params.prelu_a = 0.25;
    x_aug = augment(g.features, 0.2, Rng(s).fork(12).next_u64());
    op1 = ViewOperator(normalize_adjacency(g.adjacency));
    view_ops.clear();
    view_ops.push_back(op1);
    for (const auto& cg : multi_scale_coarsen(g, scales, 4)) view_ops.emplace_back(cg, n);

    ViewBundle vb = forward_views_normalized(g.features, x_aug, op1, view_ops, params);
    if (detail::kink_margin(vb) < 1e-4) continue;

    // centroids near the data manifold so assignments are well-conditioned
    mu = Mat(k, dims.h2);
    for (int j = 0; j < k; ++j)
      mu.row(j) = vb.v1.H.row((j * 7919) % n) + 0.05 * vb.v1.H.row((j + 1) % n);

    SimilarityTensor sims = similarity_matrices(vb.v1.Z, vb.Z2, 0.5);
    step.km1 = kmeans_cluster(sims.Zt1, k, Rng(s).fork(13).next_u64(), 1, 100);
    step.km2 = kmeans_cluster(sims.Zt2, k, Rng(s).fork(14).next_u64(), 1, 100);
    step.pt = target_distribution(soft_assign(vb.v1.H, mu, 1.0));
    break;
  }

  step.x = &g.features;
  step.x_aug = &x_aug;
  step.op1 = &op1;
  step.view_ops = &view_ops;
  step.adjacency = &g.adjacency;
  step.tau = 0.5;
  step.lambda_reg = 0.05;
  step.eps = 1e-8;
  step.dof_v = 1.0;
  step.alpha = step.beta = step.gamma = 1.0;

  ParamGrads analytic;
  Mat dMu;
  step.grads(params, mu, analytic, dMu);

  GradCheckReport rep;
  rep.seed_used = s;
  auto check_matrix = [&](Mat& w, const Mat& grad, const std::string& name) {
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        double keep = w(r, c);
        w(r, c) = keep + fd_step;
        double up = step.loss(params, mu);
        w(r, c) = keep - fd_step;
        double down = step.loss(params, mu);
        w(r, c) = keep;
        double fd = (up - down) / (2.0 * fd_step);
        double err = std::abs(grad(r, c) - fd) / std::max(1.0, std::abs(fd));
        ++rep.n_coordinates;
        if (err > rep.max_rel_err) {
          rep.max_rel_err = err;
          rep.worst_slot = name;
        }
      }
  };
  auto check_vector = [&](Vec& w, const Vec& grad, const std::string& name) {
    for (Eigen::Index r = 0; r < w.size(); ++r) {
      double keep = w(r);
      w(r) = keep + fd_step;
      double up = step.loss(params, mu);
      w(r) = keep - fd_step;
      double down = step.loss(params, mu);
      w(r) = keep;
      double fd = (up - down) / (2.0 * fd_step);
      double err = std::abs(grad(r) - fd) / std::max(1.0, std::abs(fd));
      ++rep.n_coordinates;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_slot = name;
      }
    }
  };

  check_matrix(params.W1, analytic.W1, "W1");
  check_matrix(params.W2, analytic.W2, "W2");
  check_matrix(params.Wp1, analytic.Wp1, "Wp1");
  check_vector(params.bp1, analytic.bp1, "bp1");
  check_matrix(params.Wp2, analytic.Wp2, "Wp2");
  check_vector(params.bp2, analytic.bp2, "bp2");
  {
    double keep = params.prelu_a;
    params.prelu_a = keep + fd_step;
    double up = step.loss(params, mu);
    params.prelu_a = keep - fd_step;
    double down = step.loss(params, mu);
    params.prelu_a = keep;
    double fd = (up - down) / (2.0 * fd_step);
    double err = std::abs(analytic.prelu_a - fd) / std::max(1.0, std::abs(fd));
    ++rep.n_coordinates;
    if (err > rep.max_rel_err) {
      rep.max_rel_err = err;
      rep.worst_slot = "prelu_a";
    }
  }
  check_matrix(mu, dMu, "centroids");

  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return rep;
}

}  // namespace mpccl
