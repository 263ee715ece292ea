#pragma once

#include "mpccl/coarsen.hpp"
#include "mpccl/common.hpp"
#include "mpccl/config.hpp"
#include "mpccl/graph.hpp"
#include "mpccl/kmeans.hpp"
#include "mpccl/losses.hpp"
#include "mpccl/metrics.hpp"
#include "mpccl/net.hpp"

#include <chrono>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mpccl {

// Adaptive moment optimizer with decoupled weight decay. Decay applies to
// weight matrices only, never to biases, the PReLU slope, or centroids.
class AdamW {
 public:
  AdamW(double lr, double weight_decay) : lr_(lr), wd_(weight_decay) {}

  void begin_step() { ++t_; }

  template <typename T>
  void update(T& w, const T& g, T& m, T& v, bool decay) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    double c1 = 1.0 - std::pow(beta1_, t_);
    double c2 = 1.0 - std::pow(beta2_, t_);
    T mhat = m / c1;
    T vhat = v / c2;
    if (decay) w -= lr_ * wd_ * w;
    w -= lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
  }

  void update_scalar(double& w, double g, double& m, double& v) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g * g;
    double mhat = m / (1.0 - std::pow(beta1_, t_));
    double vhat = v / (1.0 - std::pow(beta2_, t_));
    w -= lr_ * mhat / (std::sqrt(vhat) + eps_);
  }

 private:
  double lr_, wd_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

struct EpochRecord {
  double total = 0.0;
  double contrastive = 0.0;   // L_cont + lambda_reg * L_lap
  double laplacian = 0.0;
  double clustering = 0.0;
  double reconstruction = 0.0;
};

struct ScaleMeta {
  double scale = 1.0;
  int target_nodes = 0;
  int achieved_nodes = 0;
  int steps = 0;
  double dropped_weight = 0.0;
  bool early_stopped = false;
};

struct TrainResult {
  ModelParams params;
  Mat centroids;
  std::vector<int> labels;
  std::vector<EpochRecord> history;
  std::vector<double> pretrain_history;
  std::optional<MetricsReport> metrics;
  std::vector<ScaleMeta> scale_meta;
  double pretrain_seconds = 0.0;
  double train_seconds = 0.0;
};

// r_i = argmax_j of (q1_ij + q2_ij)/2, ties to the lowest index.
inline std::vector<int> predict_labels(const Mat& q1, const Mat& q2) {
  if (q1.rows() != q2.rows() || q1.cols() != q2.cols())
    throw ContractViolation("predict_labels: shape mismatch");
  std::vector<int> r(q1.rows());
  for (Eigen::Index i = 0; i < q1.rows(); ++i) {
    int best = 0;
    double bestv = -1.0;
    for (Eigen::Index j = 0; j < q1.cols(); ++j) {
      double v = 0.5 * (q1(i, j) + q2(i, j));
      if (v > bestv) {
        bestv = v;
        best = static_cast<int>(j);
      }
    }
    r[i] = best;
  }
  return r;
}

inline Mat init_centroids(const Mat& h, int k, int restarts, std::uint64_t seed) {
  return kmeans_cluster(h, k, seed, restarts, 300).centroids;
}

// Optimizes the encoder alone against the adjacency reconstruction error.
// The projection head stays at its random initialization.
inline ModelParams pretrain(const AttributedGraph& g, const TrainConfig& cfg,
                            std::vector<double>* history = nullptr) {
  cfg.validate();
  Dims dims{g.n_features, cfg.h1, cfg.h2, cfg.hp, cfg.hz};
  Rng rng = Rng(cfg.seed).fork(1);
  ModelParams params = ModelParams::glorot(dims, rng, mean_row_nnz(g.features));
  if (cfg.pretrain_epochs == 0) return params;

  SpMat ahat = normalize_adjacency(g.adjacency);
  AdamW opt(cfg.pretrain_lr, 0.0);
  Mat mW1 = Mat::Zero(params.W1.rows(), params.W1.cols()), vW1 = mW1;
  Mat mW2 = Mat::Zero(params.W2.rows(), params.W2.cols()), vW2 = mW2;

  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    ViewCache cache;
    gcn_forward(g.features, ahat, params, &cache);
    ReconstructionResult rec = reconstruction_loss(cache.H, g.adjacency);
    if (!std::isfinite(rec.loss))
      throw NumericsError("pretrain: loss diverged at epoch " + std::to_string(epoch));
    if (history) history->push_back(rec.loss);

    Mat dH = reconstruction_backward(cache.H, g.adjacency, rec.a_hat);
    ParamGrads grads = ParamGrads::zeros_like(params);
    encoder_backward(cache, params, ahat, g.features, dH, grads);
    opt.begin_step();
    opt.update(params.W1, grads.W1, mW1, vW1, false);
    opt.update(params.W2, grads.W2, mW2, vW2, false);
  }
  if (!params.all_finite()) throw NumericsError("pretrain: parameters diverged");
  return params;
}

// Full training pass: coarsen once, pretrain, joint optimization of encoder,
// head, and centroids, then label extraction.
inline TrainResult train(const AttributedGraph& g, const TrainConfig& cfg) {
  cfg.validate();
  if (g.n_classes < 1) throw ConfigError("train: dataset must declare n_classes");
  const int k = g.n_classes;
  const int n = g.n_nodes;
  using clock = std::chrono::steady_clock;

  TrainResult result;

  // coarsened graphs are built once; augmented views = original + per scale,
  // the coarse ones applied in factored form
  SpMat ahat = normalize_adjacency(g.adjacency);
  ViewOperator op1{ahat};
  std::vector<ViewOperator> view_ops;
  view_ops.push_back(op1);
  {
    auto coarse = multi_scale_coarsen(g, cfg.scales, cfg.n_min);
    for (const auto& cg : coarse) {
      view_ops.emplace_back(cg, n);
      result.scale_meta.push_back({cg.scale, cg.target_nodes, cg.graph.n_nodes, cg.steps,
                                   cg.dropped_weight, cg.early_stopped});
    }
  }

  auto t0 = clock::now();
  ModelParams params = pretrain(g, cfg, &result.pretrain_history);
  result.pretrain_seconds = std::chrono::duration<double>(clock::now() - t0).count();

  Mat h_pre = gcn_forward(g.features, ahat, params);
  Mat mu = init_centroids(h_pre, k, cfg.kmeans_restarts, Rng(cfg.seed).fork(2).next_u64());

  AdamW opt(cfg.learning_rate, cfg.weight_decay);
  ParamGrads m = ParamGrads::zeros_like(params), v = ParamGrads::zeros_like(params);
  Mat mMu = Mat::Zero(mu.rows(), mu.cols()), vMu = mMu;

  const double beta_eff = cfg.beta * (cfg.normalized_loss_scales ? 1.0 / n : 1.0);
  const double gamma_eff =
      cfg.gamma * (cfg.normalized_loss_scales ? 1.0 / (static_cast<double>(n) * n) : 1.0);

  Rng aug_seeds = Rng(cfg.seed).fork(3);
  std::uint64_t inloop_seed = Rng(cfg.seed).fork(4).next_u64();
  Mat nu1, nu2;  // warm-started contrastive k-means centroids
  Mat q1_last, q2_last;

  t0 = clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Mat x_aug = augment(g.features, cfg.mask_p, aug_seeds.next_u64());
    ViewBundle vb = forward_views_normalized(g.features, x_aug, op1, view_ops, params);

    SimilarityTensor sims = similarity_matrices(vb.v1.Z, vb.Z2, cfg.tau);
    KmeansResult km1 = kmeans_cluster(sims.Zt1, k, inloop_seed, 1, cfg.kmeans_iters,
                                      nu1.size() ? &nu1 : nullptr);
    KmeansResult km2 = kmeans_cluster(sims.Zt2, k, inloop_seed + 1, 1, cfg.kmeans_iters,
                                      nu2.size() ? &nu2 : nullptr);
    nu1 = km1.centroids;
    nu2 = km2.centroids;
    ContrastiveResult con =
        one_to_many_contrastive(sims, km1, km2, cfg.lambda_reg, cfg.eps, cfg.one_to_many);

    SoftAssign sa1 = soft_assign_full(vb.v1.H, mu, cfg.dof_v);
    SoftAssign sa2 = soft_assign_full(vb.H2, mu, cfg.dof_v);
    Mat pt = target_distribution(sa1.Q);
    ClusteringLoss clu = clustering_loss(sa1.Q, sa2.Q, pt);
    ReconstructionResult rec = reconstruction_loss(vb.v1.H, g.adjacency);

    double total = cfg.alpha * con.total + beta_eff * clu.total + gamma_eff * rec.loss;
    if (!std::isfinite(total))
      throw NumericsError("train: loss diverged at epoch " + std::to_string(epoch));
    result.history.push_back({total, con.total, con.l_lap, clu.total, rec.loss});

    // reverse sweep
    Mat dQ1, dQ2;
    clustering_loss_grads(sa1.Q, sa2.Q, pt, dQ1, dQ2);
    dQ1 *= beta_eff;
    dQ2 *= beta_eff;
    Mat dH1 = Mat::Zero(n, cfg.h2), dH2 = Mat::Zero(n, cfg.h2);
    Mat dMu = Mat::Zero(mu.rows(), mu.cols());
    soft_assign_backward(vb.v1.H, mu, sa1, dQ1, dH1, dMu);
    soft_assign_backward(vb.H2, mu, sa2, dQ2, dH2, dMu);
    dH1 += gamma_eff * reconstruction_backward(vb.v1.H, g.adjacency, rec.a_hat);

    Mat dZ1 = cfg.alpha * con.dZ1;
    Mat dZ2 = cfg.alpha * con.dZ2;
    ParamGrads grads = backward(vb, params, g.features, x_aug, dZ1, dZ2, dH1, dH2);

    opt.begin_step();
    opt.update(params.W1, grads.W1, m.W1, v.W1, true);
    opt.update(params.W2, grads.W2, m.W2, v.W2, true);
    opt.update(params.Wp1, grads.Wp1, m.Wp1, v.Wp1, true);
    opt.update(params.Wp2, grads.Wp2, m.Wp2, v.Wp2, true);
    opt.update(params.bp1, grads.bp1, m.bp1, v.bp1, false);
    opt.update(params.bp2, grads.bp2, m.bp2, v.bp2, false);
    opt.update_scalar(params.prelu_a, grads.prelu_a, m.prelu_a, v.prelu_a);
    opt.update(mu, dMu, mMu, vMu, false);
    if (!params.all_finite() || !mu.allFinite())
      throw NumericsError("train: parameters diverged at epoch " + std::to_string(epoch));

    q1_last = std::move(sa1.Q);
    q2_last = std::move(sa2.Q);
  }
  result.train_seconds = std::chrono::duration<double>(clock::now() - t0).count();

  result.params = std::move(params);
  result.centroids = std::move(mu);
  result.labels = predict_labels(q1_last, q2_last);
  if (g.has_labels()) result.metrics = clustering_metrics(result.labels, g.labels);
  return result;
}

}  // namespace mpccl
