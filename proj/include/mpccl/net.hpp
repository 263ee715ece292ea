#pragma once

#include "mpccl/coarsen.hpp"
#include "mpccl/common.hpp"
#include "mpccl/graph.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace mpccl {

struct Dims {
  int d = 0;
  int h1 = 256;
  int h2 = 512;
  int hp = 1024;
  int hz = 256;
};

// Mean number of nonzero entries per feature row; the effective fan-in of
// the first layer for sparse bag-of-words inputs.
inline double mean_row_nnz(const Mat& x) {
  double nnz = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (x(i, j) != 0.0) nnz += 1.0;
  return std::max(1.0, nnz / static_cast<double>(x.rows()));
}

// Encoder weights (two graph-convolution layers) plus projection head.
struct ModelParams {
  Mat W1;   // d x h1
  Mat W2;   // h1 x h2
  Mat Wp1;  // h2 x hp
  Vec bp1;  // hp
  Mat Wp2;  // hp x hz
  Vec bp2;  // hz
  double prelu_a = 0.25;

  // Uniform Glorot-style init. fan_in_eff (default: the full feature width)
  // sets W1's fan-in; sparse inputs pass their mean row support so the first
  // layer's output variance lands at unit scale instead of collapsing with
  // the input density. W2 carries the ReLU gain.
  static ModelParams glorot(const Dims& dims, Rng& rng, double fan_in_eff = 0.0) {
    auto init = [&rng](double fan_in, double fan_out, int rows, int cols, double gain) {
      double limit = gain * std::sqrt(6.0 / (fan_in + fan_out));
      Mat m(rows, cols);
      for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) m(i, j) = rng.uniform(-limit, limit);
      return m;
    };
    if (fan_in_eff <= 0.0) fan_in_eff = dims.d;
    fan_in_eff = std::min(fan_in_eff, static_cast<double>(dims.d));
    ModelParams p;
    p.W1 = init(fan_in_eff, dims.h1, dims.d, dims.h1, 1.0);
    p.W2 = init(dims.h1, dims.h2, dims.h1, dims.h2, std::sqrt(2.0));
    p.Wp1 = init(dims.h2, dims.hp, dims.h2, dims.hp, 1.0);
    p.bp1 = Vec::Zero(dims.hp);
    p.Wp2 = init(dims.hp, dims.hz, dims.hp, dims.hz, 1.0);
    p.bp2 = Vec::Zero(dims.hz);
    p.prelu_a = 0.25;
    return p;
  }

  bool all_finite() const {
    return W1.allFinite() && W2.allFinite() && Wp1.allFinite() && bp1.allFinite() &&
           Wp2.allFinite() && bp2.allFinite() && std::isfinite(prelu_a);
  }
};

struct ParamGrads {
  Mat W1, W2, Wp1, Wp2;
  Vec bp1, bp2;
  double prelu_a = 0.0;

  static ParamGrads zeros_like(const ModelParams& p) {
    ParamGrads g;
    g.W1 = Mat::Zero(p.W1.rows(), p.W1.cols());
    g.W2 = Mat::Zero(p.W2.rows(), p.W2.cols());
    g.Wp1 = Mat::Zero(p.Wp1.rows(), p.Wp1.cols());
    g.bp1 = Vec::Zero(p.bp1.size());
    g.Wp2 = Mat::Zero(p.Wp2.rows(), p.Wp2.cols());
    g.bp2 = Vec::Zero(p.bp2.size());
    g.prelu_a = 0.0;
    return g;
  }
};

// Symmetric renormalized view operator. Either an explicit sparse matrix or
// the factored form D^{-1/2} (S W_c S^T + I) D^{-1/2} of a lifted coarse
// adjacency, which applies in O((N + nnz(W_c)) h) instead of O(nnz(lift) h).
class ViewOperator {
 public:
  ViewOperator() = default;

  explicit ViewOperator(SpMat ahat) : factored_(false), ahat_(std::move(ahat)) {}

  ViewOperator(const CoarsenedGraph& cg, int n_original) : factored_(true) {
    assign_ = cg.merge_map.assignment;
    if (static_cast<int>(assign_.size()) != n_original)
      throw ContractViolation("ViewOperator: merge map does not cover the graph");
    const int nc = cg.graph.n_nodes;
    wc_ = cg.graph.to_sparse();
    Vec sizes = Vec::Zero(nc);
    for (int u = 0; u < n_original; ++u) sizes(assign_[u]) += 1.0;
    Vec coarse_deg = wc_ * sizes;
    dinv_sqrt_.resize(n_original);
    for (int u = 0; u < n_original; ++u)
      dinv_sqrt_(u) = 1.0 / std::sqrt(1.0 + coarse_deg(assign_[u]));
  }

  static ViewOperator from_raw_adjacency(const SpMat& a) {
    return ViewOperator(normalize_adjacency(a));
  }

  Eigen::Index rows() const {
    return factored_ ? static_cast<Eigen::Index>(assign_.size()) : ahat_.rows();
  }

  // Ahat * m
  Mat apply(const Mat& m) const {
    if (!factored_) return ahat_ * m;
    const Eigen::Index n = rows();
    Mat scaled = dinv_sqrt_.asDiagonal() * m;
    Mat agg = Mat::Zero(wc_.rows(), m.cols());
    for (Eigen::Index u = 0; u < n; ++u) agg.row(assign_[u]) += scaled.row(u);
    Mat mid = wc_ * agg;
    Mat out = scaled;
    for (Eigen::Index u = 0; u < n; ++u) out.row(u) += mid.row(assign_[u]);
    return dinv_sqrt_.asDiagonal() * out;
  }

  // dense equivalent, for tests and desk-scale inspection
  Mat to_dense() const {
    if (!factored_) return Mat(ahat_);
    Mat eye = Mat::Identity(rows(), rows());
    return apply(eye);
  }

 private:
  bool factored_ = false;
  SpMat ahat_;
  Vec dinv_sqrt_;
  std::vector<int> assign_;
  SpMat wc_;
};

// Feature dropout: each (sample, feature) entry is zeroed independently with
// probability p; survivors are kept unscaled. Deterministic for a fixed seed.
inline Mat augment(const Mat& x, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augment: p must lie in [0, 1]");
  Rng rng(seed);
  Mat out = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (rng.uniform() < p) out(i, j) = 0.0;
  return out;
}

// Intermediates of one encoder + head pass, kept for the backward sweep.
struct ViewCache {
  Mat Y;   // pre-activation of layer 1: Ahat X W1
  Mat R;   // relu(Y)
  Mat AR;  // Ahat R
  Mat H;   // AR W2 (encoder output)
  Mat B;   // H Wp1 + bp1
  Mat P;   // prelu(B)
  Mat Z;   // P Wp2 + bp2 (head output)
};

namespace detail {

inline void encode_from_xw1(const Mat& xw1, const ViewOperator& op, const ModelParams& mp,
                            ViewCache& cache) {
  cache.Y = op.apply(xw1);
  cache.R = cache.Y.cwiseMax(0.0);
  cache.AR = op.apply(cache.R);
  cache.H.noalias() = cache.AR * mp.W2;
  if (!cache.H.allFinite()) throw NumericsError("gcn_forward: non-finite intermediate");
}

}  // namespace detail

inline Mat gcn_forward(const Mat& x, const ViewOperator& op, const ModelParams& mp,
                       ViewCache* cache = nullptr) {
  ViewCache local;
  ViewCache& c = cache ? *cache : local;
  detail::encode_from_xw1(x * mp.W1, op, mp, c);
  return c.H;
}

inline Mat gcn_forward(const Mat& x, const SpMat& ahat, const ModelParams& mp,
                       ViewCache* cache = nullptr) {
  return gcn_forward(x, ViewOperator(ahat), mp, cache);
}

inline Mat mlp_project(const Mat& h, const ModelParams& mp, ViewCache* cache = nullptr) {
  Mat b = (h * mp.Wp1).rowwise() + mp.bp1.transpose();
  Mat p = b.unaryExpr([a = mp.prelu_a](double v) { return v >= 0.0 ? v : a * v; });
  Mat z = (p * mp.Wp2).rowwise() + mp.bp2.transpose();
  if (!z.allFinite()) throw NumericsError("mlp_project: non-finite intermediate");
  if (cache) {
    cache->B = std::move(b);
    cache->P = std::move(p);
    cache->Z = z;
  }
  return z;
}

// (1/K) * sum_s w_s * M_s
inline Mat fuse_views(const std::vector<Mat>& mats, const std::vector<double>& weights) {
  if (mats.empty()) throw ConfigError("fuse_views: no views");
  if (weights.size() != mats.size()) throw ContractViolation("fuse_views: weight count mismatch");
  Mat out = Mat::Zero(mats[0].rows(), mats[0].cols());
  for (size_t s = 0; s < mats.size(); ++s) {
    if (mats[s].rows() != out.rows() || mats[s].cols() != out.cols())
      throw ContractViolation("fuse_views: shape mismatch");
    out += weights[s] * mats[s];
  }
  return out / static_cast<double>(mats.size());
}

// Original view plus one augmented view per scale, with fused H2/Z2. Keeps
// the view operators so the backward sweep can replay the graph products.
struct ViewBundle {
  ViewCache v1;               // (X, Ahat) view
  std::vector<ViewCache> v2;  // (X_aug, Ahat_s) per scale
  Mat H2, Z2;                 // fused multi-scale representations
  std::vector<double> fuse_weights;
  ViewOperator op1;
  std::vector<ViewOperator> ops;
};

inline ViewBundle forward_views_normalized(const Mat& x, const Mat& x_aug,
                                           const ViewOperator& op,
                                           const std::vector<ViewOperator>& view_ops,
                                           const ModelParams& mp,
                                           std::vector<double> fuse_weights = {}) {
  if (view_ops.empty()) throw ConfigError("forward_views: empty scale list");
  if (fuse_weights.empty()) fuse_weights.assign(view_ops.size(), 1.0);
  if (fuse_weights.size() != view_ops.size())
    throw ContractViolation("forward_views: fusion weight count mismatch");

  ViewBundle vb;
  vb.fuse_weights = std::move(fuse_weights);
  vb.op1 = op;
  vb.ops = view_ops;

  detail::encode_from_xw1(x * mp.W1, op, mp, vb.v1);
  mlp_project(vb.v1.H, mp, &vb.v1);

  Mat xaug_w1 = x_aug * mp.W1;  // shared across the augmented views
  vb.v2.resize(view_ops.size());
  for (size_t s = 0; s < view_ops.size(); ++s) {
    detail::encode_from_xw1(xaug_w1, view_ops[s], mp, vb.v2[s]);
    mlp_project(vb.v2[s].H, mp, &vb.v2[s]);
  }

  std::vector<Mat> hs, zs;
  for (const auto& c : vb.v2) {
    hs.push_back(c.H);
    zs.push_back(c.Z);
  }
  vb.H2 = fuse_views(hs, vb.fuse_weights);
  vb.Z2 = fuse_views(zs, vb.fuse_weights);
  return vb;
}

inline ViewBundle forward_views_normalized(const Mat& x, const Mat& x_aug, const SpMat& ahat,
                                           const std::vector<SpMat>& ahat_views,
                                           const ModelParams& mp,
                                           std::vector<double> fuse_weights = {}) {
  std::vector<ViewOperator> ops;
  ops.reserve(ahat_views.size());
  for (const SpMat& a : ahat_views) ops.emplace_back(a);
  return forward_views_normalized(x, x_aug, ViewOperator(ahat), ops, mp,
                                  std::move(fuse_weights));
}

// Spec-shaped entry point: lifted adjacencies are raw (first one the
// original adjacency) and get renormalized here.
inline ViewBundle forward_views(const AttributedGraph& g, const Mat& x_aug,
                                const std::vector<SpMat>& lifted_adjs, const ModelParams& mp,
                                std::vector<double> fuse_weights = {}) {
  std::vector<ViewOperator> ops;
  ops.reserve(lifted_adjs.size());
  for (const SpMat& a : lifted_adjs) ops.push_back(ViewOperator::from_raw_adjacency(a));
  return forward_views_normalized(g.features, x_aug,
                                  ViewOperator::from_raw_adjacency(g.adjacency), ops, mp,
                                  std::move(fuse_weights));
}

// Head backward for one view: consumes dZ, returns dH, accumulates grads.
inline Mat head_backward(const ViewCache& c, const ModelParams& mp, const Mat& dZ,
                         ParamGrads& g) {
  g.bp2 += dZ.colwise().sum().transpose();
  g.Wp2.noalias() += c.P.transpose() * dZ;
  Mat dP = dZ * mp.Wp2.transpose();
  double da = 0.0;
  Mat dB(dP.rows(), dP.cols());
  for (Eigen::Index j = 0; j < dP.cols(); ++j)
    for (Eigen::Index i = 0; i < dP.rows(); ++i) {
      double b = c.B(i, j);
      if (b >= 0.0) {
        dB(i, j) = dP(i, j);
      } else {
        dB(i, j) = mp.prelu_a * dP(i, j);
        da += dP(i, j) * b;
      }
    }
  g.prelu_a += da;
  g.bp1 += dB.colwise().sum().transpose();
  g.Wp1.noalias() += c.H.transpose() * dB;
  return dB * mp.Wp1.transpose();
}

// Encoder backward for one view. The W1 contribution X^T (Ahat dY) is left
// to the caller so per-input terms can be accumulated before the final
// feature-matrix product; this returns Ahat dY.
inline Mat encoder_backward_partial(const ViewCache& c, const ModelParams& mp,
                                    const ViewOperator& op, const Mat& dH, ParamGrads& g) {
  g.W2.noalias() += c.AR.transpose() * dH;
  Mat dR = op.apply(dH * mp.W2.transpose());
  Mat dY = (c.Y.array() > 0.0).select(dR, Mat::Zero(dR.rows(), dR.cols()));
  return op.apply(dY);
}

inline void encoder_backward(const ViewCache& c, const ModelParams& mp, const ViewOperator& op,
                             const Mat& x, const Mat& dH, ParamGrads& g) {
  g.W1.noalias() += x.transpose() * encoder_backward_partial(c, mp, op, dH, g);
}

inline void encoder_backward(const ViewCache& c, const ModelParams& mp, const SpMat& ahat,
                             const Mat& x, const Mat& dH, ParamGrads& g) {
  encoder_backward(c, mp, ViewOperator(ahat), x, dH, g);
}

// Reverse-mode through the whole view bundle. dZ1/dH1 act on the original
// view, dZ2/dH2 on the fused multi-scale outputs; fusion weights distribute
// the fused gradients onto the per-scale views.
inline ParamGrads backward(const ViewBundle& vb, const ModelParams& mp, const Mat& x,
                           const Mat& x_aug, const Mat& dZ1, const Mat& dZ2, const Mat& dH1,
                           const Mat& dH2) {
  if (vb.v2.size() != vb.ops.size())
    throw ContractViolation("backward: cache/view count mismatch");
  ParamGrads g = ParamGrads::zeros_like(mp);

  Mat dH = head_backward(vb.v1, mp, dZ1, g);
  dH += dH1;
  g.W1.noalias() += x.transpose() * encoder_backward_partial(vb.v1, mp, vb.op1, dH, g);

  const double k = static_cast<double>(vb.v2.size());
  Mat shared_t;  // sum of Ahat_s dY_s over views sharing x_aug
  for (size_t s = 0; s < vb.v2.size(); ++s) {
    double w = vb.fuse_weights[s] / k;
    Mat dZs = w * dZ2;
    Mat dHs = head_backward(vb.v2[s], mp, dZs, g);
    dHs += w * dH2;
    Mat t = encoder_backward_partial(vb.v2[s], mp, vb.ops[s], dHs, g);
    if (shared_t.size() == 0)
      shared_t = std::move(t);
    else
      shared_t += t;
  }
  g.W1.noalias() += x_aug.transpose() * shared_t;
  return g;
}

}  // namespace mpccl
