#include <catch_amalgamated.hpp>

#include "mpccl/losses.hpp"
#include "support.hpp"

#include <cmath>

using namespace mpccl;
using Catch::Approx;

namespace {

Mat random_rows(int n, int d, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Mat z(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) z(i, j) = scale * rng.normal();
  return z;
}

KmeansResult fixed_clustering(const Mat& centroids, std::vector<int> labels) {
  KmeansResult km;
  km.centroids = centroids;
  km.labels = std::move(labels);
  return km;
}

// loss value at (Z1, Z2, C1, C2) with clustering labels held fixed
double contrastive_value(const Mat& z1, const Mat& z2, const KmeansResult& km1,
                         const KmeansResult& km2, double tau, double lambda, double eps) {
  SimilarityTensor sim = similarity_matrices(z1, z2, tau);
  return one_to_many_contrastive(sim, km1, km2, lambda, eps).total;
}

}  // namespace

TEST_CASE("similarity_matrices fundamentals") {
  SECTION("identical views give e^{1/tau} on the cross diagonal") {
    Mat z = random_rows(4, 3, 1);
    SimilarityTensor sim = similarity_matrices(z, z, 1.0);
    for (int i = 0; i < 4; ++i) REQUIRE(sim.S12(i, i) == Approx(std::exp(1.0)));
  }
  SECTION("orthogonal rows give e^0 = 1 off the diagonal") {
    Mat z = Mat::Identity(3, 3);
    SimilarityTensor sim = similarity_matrices(z, z, 1.0);
    REQUIRE(sim.S11(0, 1) == Approx(1.0));
    REQUIRE(sim.S11(1, 2) == Approx(1.0));
  }
  SECTION("worked example: exp(sqrt(2)) at tau = 0.5") {
    Mat z1(1, 2), z2(1, 2);
    z1 << 1, 0;
    z2 << 1, 1;
    SimilarityTensor sim = similarity_matrices(z1, z2, 0.5);
    REQUIRE(sim.S12(0, 0) == Approx(std::exp(std::sqrt(2.0))).epsilon(1e-12));
  }
  SECTION("tau must be positive") {
    Mat z = Mat::Ones(2, 2);
    REQUIRE_THROWS_AS(similarity_matrices(z, z, 0.0), ConfigError);
  }
  SECTION("zero rows are flagged") {
    Mat z = Mat::Zero(2, 2);
    z(0, 0) = 1.0;
    REQUIRE(similarity_matrices(z, z, 1.0).had_zero_row);
  }
}

TEST_CASE("one_to_many_contrastive closed form at N = 1") {
  Mat z1(1, 2), z2(1, 2);
  z1 << 1, 0;
  z2 << 0.6, 0.8;
  double tau = 0.5, eps = 1e-8;
  SimilarityTensor sim = similarity_matrices(z1, z2, tau);
  KmeansResult km1 = fixed_clustering(sim.Zt1, {0});
  KmeansResult km2 = fixed_clustering(sim.Zt2, {0});
  ContrastiveResult res = one_to_many_contrastive(sim, km1, km2, 0.0, eps);

  double s12 = sim.S12(0, 0);
  double s1c = std::exp(sim.Zt1.row(0).dot(km2.centroids.row(0)) / tau);
  REQUIRE(res.l_forward == Approx(-std::log((s12 + s1c) / (s12 + eps))));
  REQUIRE(std::isfinite(res.total));
}

TEST_CASE("per-node contrastive terms are finite for positive eps") {
  Mat z1 = random_rows(6, 4, 3), z2 = random_rows(6, 4, 4);
  SimilarityTensor sim = similarity_matrices(z1, z2, 0.5);
  KmeansResult km1 = fixed_clustering(sim.Zt1.topRows(2), {0, 1, 0, 1, 0, 1});
  KmeansResult km2 = fixed_clustering(sim.Zt2.topRows(2), {1, 0, 1, 0, 1, 0});
  ContrastiveResult res = one_to_many_contrastive(sim, km1, km2, 0.1, 1e-8);
  REQUIRE(std::isfinite(res.total));
  REQUIRE_THROWS_AS(one_to_many_contrastive(sim, km1, km2, 0.1, 0.0), ConfigError);
}

TEST_CASE("contrastive loss falls when a positive-pair similarity rises") {
  // pulling z2's first row toward z1's first row increases s_11^(12)
  Mat z1 = random_rows(5, 3, 7), z2 = random_rows(5, 3, 8);
  auto value = [&](const Mat& a, const Mat& b) {
    SimilarityTensor sim = similarity_matrices(a, b, 0.5);
    KmeansResult km1 = fixed_clustering(sim.Zt1.topRows(1), {0, 0, 0, 0, 0});
    KmeansResult km2 = fixed_clustering(sim.Zt2.topRows(1), {0, 0, 0, 0, 0});
    return one_to_many_contrastive(sim, km1, km2, 0.0, 1e-8).l_forward;
  };
  Mat z2_closer = z2;
  z2_closer.row(0) = 0.5 * z2.row(0) + 0.5 * z1.row(0) * (z2.row(0).norm() / z1.row(0).norm());
  REQUIRE(value(z1, z2_closer) < value(z1, z2));
}

TEST_CASE("contrastive and regularizer gradients match finite differences") {
  const int n = 20, hz = 8;
  Mat z1 = random_rows(n, hz, 11), z2 = random_rows(n, hz, 12);
  double tau = 0.5, lambda = 0.2, eps = 1e-8;
  SimilarityTensor sim = similarity_matrices(z1, z2, tau);
  Rng rng(13);
  std::vector<int> l1(n), l2(n);
  for (int i = 0; i < n; ++i) {
    l1[i] = static_cast<int>(rng.below(3));
    l2[i] = static_cast<int>(rng.below(3));
  }
  KmeansResult km1 = fixed_clustering(random_rows(3, hz, 14, 0.3), l1);
  KmeansResult km2 = fixed_clustering(random_rows(3, hz, 15, 0.3), l2);
  ContrastiveResult res = one_to_many_contrastive(sim, km1, km2, lambda, eps);

  const double h = 1e-6;
  double max_err = 0.0;
  auto fd_check = [&](Mat& slot, const Mat& grad) {
    for (int c = 0; c < grad.cols(); ++c)
      for (int r = 0; r < grad.rows(); ++r) {
        double keep = slot(r, c);
        slot(r, c) = keep + h;
        double up = contrastive_value(z1, z2, km1, km2, tau, lambda, eps);
        slot(r, c) = keep - h;
        double down = contrastive_value(z1, z2, km1, km2, tau, lambda, eps);
        slot(r, c) = keep;
        double fd = (up - down) / (2.0 * h);
        max_err = std::max(max_err, std::abs(grad(r, c) - fd) / std::max(1.0, std::abs(fd)));
      }
  };
  fd_check(z1, res.dZ1);
  fd_check(z2, res.dZ2);
  fd_check(km1.centroids, res.dC1);
  fd_check(km2.centroids, res.dC2);
  INFO("max rel err " << max_err);
  REQUIRE(max_err < 1e-4);
}

TEST_CASE("laplacian_reg values") {
  SECTION("single node gives a zero regularizer") {
    Mat z(1, 3);
    z << 0.4, 0.2, -0.1;
    SimilarityTensor sim = similarity_matrices(z, z, 0.5);
    REQUIRE(laplacian_reg(sim) == Approx(0.0).margin(1e-12));
  }
  SECTION("matches a dense 4-node oracle") {
    Mat z = random_rows(4, 3, 21);
    SimilarityTensor sim = similarity_matrices(z, z, 0.7);
    // oracle: explicit L_norm = I - D^{-1/2} S D^{-1/2}, trace via loops
    auto view_oracle = [](const Mat& s, const Mat& zt) {
      Vec d = s.rowwise().sum();
      Mat lnorm = Mat::Identity(s.rows(), s.cols());
      for (int i = 0; i < s.rows(); ++i)
        for (int j = 0; j < s.cols(); ++j) lnorm(i, j) -= s(i, j) / std::sqrt(d(i) * d(j));
      double tr = 0.0;
      for (int a = 0; a < zt.cols(); ++a)
        for (int i = 0; i < s.rows(); ++i)
          for (int j = 0; j < s.cols(); ++j) tr += zt(i, a) * lnorm(i, j) * zt(j, a);
      return tr;
    };
    double oracle = (view_oracle(sim.S11, sim.Zt1) + view_oracle(sim.S22, sim.Zt2)) / (2.0 * 4);
    REQUIRE(laplacian_reg(sim) == Approx(oracle).margin(1e-12));
  }
  SECTION("nonnegative for arbitrary inputs") {
    for (std::uint64_t seed = 30; seed < 36; ++seed) {
      Mat z1 = random_rows(6, 4, seed), z2 = random_rows(6, 4, seed + 100);
      SimilarityTensor sim = similarity_matrices(z1, z2, 0.5);
      REQUIRE(laplacian_reg(sim) >= -1e-10);
    }
  }
  SECTION("identical rows sit in the flat direction of the normalized Laplacian") {
    Mat z(4, 3);
    for (int i = 0; i < 4; ++i) z.row(i) << 1.0, 2.0, -1.0;
    SimilarityTensor sim = similarity_matrices(z, z, 0.5);
    // uniform similarities: normalized rows are identical, D^{-1/2} S D^{-1/2}
    // has the constant vector as eigenvector with eigenvalue 1
    REQUIRE(laplacian_reg(sim) == Approx(0.0).margin(1e-10));
  }
}

TEST_CASE("soft_assign basics") {
  SECTION("single centroid gives a column of ones") {
    Mat h = random_rows(5, 3, 41);
    Mat q = soft_assign(h, h.topRows(1), 1.0);
    REQUIRE((q - Mat::Ones(5, 1)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SECTION("equidistant point splits evenly") {
    Mat h(1, 2);
    h << 0, 0;
    Mat mu(2, 2);
    mu << 1, 0, -1, 0;
    Mat q = soft_assign(h, mu, 1.0);
    REQUIRE(q(0, 0) == Approx(0.5));
    REQUIRE(q(0, 1) == Approx(0.5));
  }
  SECTION("worked example: distances 0 and 1 at v = 1 give (2/3, 1/3)") {
    Mat h(1, 1);
    h << 0;
    Mat mu(2, 1);
    mu << 0, 1;
    Mat q = soft_assign(h, mu, 1.0);
    REQUIRE(q(0, 0) == Approx(2.0 / 3.0));
    REQUIRE(q(0, 1) == Approx(1.0 / 3.0));
  }
  SECTION("no centroids rejected") {
    Mat h = random_rows(3, 2, 1);
    REQUIRE_THROWS_AS(soft_assign(h, Mat(0, 2), 1.0), DomainError);
  }
  SECTION("rows always sum to one") {
    Mat h = random_rows(10, 4, 43);
    Mat q = soft_assign(h, random_rows(3, 4, 44), 2.5);
    REQUIRE((q.rowwise().sum() - Vec::Ones(10)).cwiseAbs().maxCoeff() <= 1e-9);
    REQUIRE(q.minCoeff() >= 0.0);
  }
}

TEST_CASE("target_distribution") {
  SECTION("one-hot rows are a fixed point") {
    Mat q(3, 2);
    q << 1, 0, 0, 1, 1, 0;
    REQUIRE((target_distribution(q) - q).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SECTION("uniform rows stay uniform") {
    Mat q = Mat::Constant(4, 3, 1.0 / 3.0);
    REQUIRE((target_distribution(q) - q).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SECTION("worked arithmetic example") {
    Mat q(2, 2);
    q << 0.8, 0.2, 0.6, 0.4;
    Mat p = target_distribution(q);
    // f = (1.4, 0.6); row 1 proportional to (0.64/1.4, 0.04/0.6)
    REQUIRE(p(0, 0) == Approx(0.87272727272727).epsilon(1e-10));
    REQUIRE(p(0, 1) == Approx(0.12727272727272).epsilon(1e-10));
    REQUIRE(p.row(1).sum() == Approx(1.0));
  }
  SECTION("empty cluster is excluded and flagged") {
    Mat q(2, 2);
    q << 1, 0, 1, 0;
    bool flag = false;
    Mat p = target_distribution(q, &flag);
    REQUIRE(flag);
    REQUIRE(p.col(1).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(p(0, 0) == Approx(1.0));
  }
}

TEST_CASE("clustering_loss") {
  SECTION("identical distributions give zero loss") {
    Mat q = target_distribution(soft_assign(random_rows(6, 3, 51), random_rows(2, 3, 52), 1.0));
    ClusteringLoss l = clustering_loss(q, q, q);
    REQUIRE(l.total == Approx(0.0).margin(1e-12));
  }
  SECTION("each KL term is nonnegative") {
    for (std::uint64_t seed = 60; seed < 66; ++seed) {
      Mat h1 = random_rows(8, 3, seed), h2 = random_rows(8, 3, seed + 10);
      Mat mu = random_rows(3, 3, seed + 20);
      Mat q1 = soft_assign(h1, mu, 1.0), q2 = soft_assign(h2, mu, 1.0);
      Mat pt = target_distribution(q1);
      ClusteringLoss l = clustering_loss(q1, q2, pt);
      REQUIRE(l.kl_target_q1 >= -1e-12);
      REQUIRE(l.kl_target_q2 >= -1e-12);
      REQUIRE(l.kl_consistency >= -1e-12);
    }
  }
  SECTION("single-row hand computation equals log 2") {
    Mat pt(1, 2), q1(1, 2);
    pt << 1, 0;
    q1 << 0.5, 0.5;
    ClusteringLoss l = clustering_loss(q1, q1, pt);
    REQUIRE(l.kl_target_q1 == Approx(std::log(2.0)));
  }
  SECTION("shape mismatch rejected") {
    REQUIRE_THROWS_AS(clustering_loss(Mat::Ones(2, 2), Mat::Ones(2, 3), Mat::Ones(2, 2)),
                      ContractViolation);
  }
}

TEST_CASE("reconstruction_loss") {
  SECTION("H = 0 gives 0.25 N^2 on binary adjacency") {
    auto g = testutil::random_graph(9, 2, 0.3, 71);
    ReconstructionResult r = reconstruction_loss(Mat::Zero(9, 4), g.adjacency);
    REQUIRE(r.loss == Approx(0.25 * 81.0));
  }
  SECTION("loss is positive for binary adjacency") {
    auto g = testutil::random_graph(7, 2, 0.4, 72);
    Mat h = random_rows(7, 3, 73);
    REQUIRE(reconstruction_loss(h, g.adjacency).loss > 0.0);
  }
  SECTION("matches an entrywise scalar oracle on a 6-node case") {
    auto g = testutil::random_graph(6, 2, 0.5, 74);
    Mat h = random_rows(6, 3, 75);
    ReconstructionResult r = reconstruction_loss(h, g.adjacency);
    Mat a = Mat(g.adjacency);
    double oracle = 0.0;
    for (int u = 0; u < 6; ++u)
      for (int v = 0; v < 6; ++v) {
        double m = 0.0;
        for (int d = 0; d < 3; ++d) m += h(u, d) * h(v, d);
        double s = 1.0 / (1.0 + std::exp(-m));
        oracle += (a(u, v) - s) * (a(u, v) - s);
      }
    REQUIRE(r.loss == Approx(oracle).margin(1e-12));
  }
  SECTION("gradient matches finite differences") {
    auto g = testutil::random_graph(5, 2, 0.5, 76);
    Mat h = random_rows(5, 3, 77);
    ReconstructionResult r = reconstruction_loss(h, g.adjacency);
    Mat grad = reconstruction_backward(h, g.adjacency, r.a_hat);
    const double step = 1e-6;
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 3; ++j) {
        double keep = h(i, j);
        h(i, j) = keep + step;
        double up = reconstruction_loss(h, g.adjacency).loss;
        h(i, j) = keep - step;
        double down = reconstruction_loss(h, g.adjacency).loss;
        h(i, j) = keep;
        double fd = (up - down) / (2.0 * step);
        REQUIRE(grad(i, j) == Approx(fd).margin(1e-6));
      }
  }
}

TEST_CASE("total_loss weighting") {
  REQUIRE(total_loss(1.5, 2.5, 3.5, 1, 1, 1) == Approx(7.5));
  REQUIRE(total_loss(1.5, 2.5, 3.5, 1, 1, 0) == Approx(4.0));
  REQUIRE(total_loss(3.0, 5.0, 7.0, 1, 1, 1) == Approx(2.0 * total_loss(1.5, 2.5, 3.5, 1, 1, 1)));
  REQUIRE_THROWS_AS(total_loss(1, 1, 1, -1, 0, 0), ConfigError);
}

TEST_CASE("centroid_gradient") {
  SECTION("matches finite differences of the clustering loss") {
    for (std::uint64_t seed = 80; seed < 84; ++seed) {
      const int n = 12, d = 4, k = 3;
      Mat h1 = random_rows(n, d, seed), h2 = random_rows(n, d, seed + 50);
      Mat mu = random_rows(k, d, seed + 90, 0.8);
      Mat pt = target_distribution(soft_assign(h1, mu, 1.0));
      Mat grad = centroid_gradient(h1, h2, mu, 1.0, pt);
      const double step = 1e-6;
      for (int j = 0; j < k; ++j)
        for (int c = 0; c < d; ++c) {
          double keep = mu(j, c);
          mu(j, c) = keep + step;
          double up =
              clustering_loss(soft_assign(h1, mu, 1.0), soft_assign(h2, mu, 1.0), pt).total;
          mu(j, c) = keep - step;
          double down =
              clustering_loss(soft_assign(h1, mu, 1.0), soft_assign(h2, mu, 1.0), pt).total;
          mu(j, c) = keep;
          double fd = (up - down) / (2.0 * step);
          double rel = std::abs(grad(j, c) - fd) / std::max(1.0, std::abs(fd));
          REQUIRE(rel < 1e-5);
        }
    }
  }
  SECTION("mirror-symmetric configuration cancels along the axis") {
    Mat h(2, 2);
    h << 0.7, 0.0, -0.7, 0.0;  // data mirrored across the centroid midline
    Mat mu(2, 2);
    mu << -1.0, 0.0, 1.0, 0.0;
    Mat pt = target_distribution(soft_assign(h, mu, 1.0));
    Mat grad = centroid_gradient(h, h, mu, 1.0, pt);
    REQUIRE(std::abs(grad(0, 0) + grad(1, 0)) <= 1e-10);
    REQUIRE(std::abs(grad(0, 1)) <= 1e-10);
    REQUIRE(std::abs(grad(1, 1)) <= 1e-10);
  }
  SECTION("single point sitting on its only centroid is stationary") {
    Mat h(1, 3);
    h << 0.2, -0.4, 0.9;
    Mat mu = h;
    Mat q = soft_assign(h, mu, 1.0);
    Mat pt = target_distribution(q);
    REQUIRE(q(0, 0) == Approx(1.0));
    REQUIRE(pt(0, 0) == Approx(1.0));
    Mat grad = centroid_gradient(h, h, mu, 1.0, pt);
    REQUIRE(grad.cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("soft_assign_backward agrees with the closed-form centroid gradient") {
  const int n = 10, d = 3, k = 2;
  Mat h1 = random_rows(n, d, 91), h2 = random_rows(n, d, 92);
  Mat mu = random_rows(k, d, 93);
  SoftAssign sa1 = soft_assign_full(h1, mu, 1.0);
  SoftAssign sa2 = soft_assign_full(h2, mu, 1.0);
  Mat pt = target_distribution(sa1.Q);

  Mat dQ1, dQ2;
  clustering_loss_grads(sa1.Q, sa2.Q, pt, dQ1, dQ2);
  Mat dH1 = Mat::Zero(n, d), dH2 = Mat::Zero(n, d), dMu = Mat::Zero(k, d);
  soft_assign_backward(h1, mu, sa1, dQ1, dH1, dMu);
  soft_assign_backward(h2, mu, sa2, dQ2, dH2, dMu);

  Mat closed = centroid_gradient(h1, h2, mu, 1.0, pt);
  REQUIRE((dMu - closed).cwiseAbs().maxCoeff() <= 1e-8);
}
