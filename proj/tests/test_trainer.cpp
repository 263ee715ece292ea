#include <catch_amalgamated.hpp>

#include "mpccl/synthetic.hpp"
#include "mpccl/trainer.hpp"
#include "support.hpp"

using namespace mpccl;
using Catch::Approx;

namespace {

AttributedGraph small_dataset(std::uint64_t seed = 5) {
  SyntheticSpec spec;
  spec.n_nodes = 60;
  spec.n_features = 12;
  spec.n_classes = 3;
  spec.topic_on = 0.4;
  spec.background_on = 0.05;
  spec.seed = seed;
  return make_planted_graph(spec);
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.scales = {0.5};
  cfg.n_min = 4;
  cfg.h1 = 8;
  cfg.h2 = 6;
  cfg.hp = 10;
  cfg.hz = 5;
  cfg.epochs = 5;
  cfg.pretrain_epochs = 3;
  cfg.kmeans_restarts = 2;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("predict_labels averages the two assignments") {
  SECTION("one-hot agreement") {
    Mat q(2, 3);
    q << 1, 0, 0, 0, 0, 1;
    REQUIRE(predict_labels(q, q) == std::vector<int>{0, 2});
  }
  SECTION("averaging flips the winner") {
    Mat q1(1, 2), q2(1, 2);
    q1 << 0.6, 0.4;
    q2 << 0.2, 0.8;
    REQUIRE(predict_labels(q1, q2) == std::vector<int>{1});
  }
  SECTION("exact tie goes to the lowest index") {
    Mat q(1, 2);
    q << 0.5, 0.5;
    REQUIRE(predict_labels(q, q) == std::vector<int>{0});
  }
  SECTION("shape mismatch rejected") {
    REQUIRE_THROWS_AS(predict_labels(Mat::Ones(1, 2), Mat::Ones(2, 2)), ContractViolation);
  }
}

TEST_CASE("adamw decay mechanics") {
  SECTION("lr = 0 leaves weights untouched even with decay") {
    AdamW opt(0.0, 0.5);
    Mat w = Mat::Ones(2, 2), g = Mat::Ones(2, 2);
    Mat m = Mat::Zero(2, 2), v = Mat::Zero(2, 2);
    Mat before = w;
    opt.begin_step();
    opt.update(w, g, m, v, true);
    REQUIRE((w - before).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("zero gradient with decay shrinks by exactly (1 - lr*decay)") {
    double lr = 0.1, wd = 0.25;
    AdamW opt(lr, wd);
    Mat w = Mat::Constant(2, 3, 2.0), g = Mat::Zero(2, 3);
    Mat m = Mat::Zero(2, 3), v = Mat::Zero(2, 3);
    opt.begin_step();
    opt.update(w, g, m, v, true);
    REQUIRE((w - Mat::Constant(2, 3, 2.0 * (1.0 - lr * wd))).cwiseAbs().maxCoeff() <= 1e-15);
  }
  SECTION("decay flag off leaves magnitude governed by the gradient only") {
    AdamW opt(0.1, 0.5);
    Vec w = Vec::Ones(3), g = Vec::Zero(3), m = Vec::Zero(3), v = Vec::Zero(3);
    opt.begin_step();
    opt.update(w, g, m, v, false);
    REQUIRE((w - Vec::Ones(3)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("pretrain with zero epochs returns the seeded initialization") {
  AttributedGraph g = small_dataset();
  TrainConfig cfg = small_config();
  cfg.pretrain_epochs = 0;
  ModelParams p = pretrain(g, cfg);
  Dims dims{g.n_features, cfg.h1, cfg.h2, cfg.hp, cfg.hz};
  Rng rng = Rng(cfg.seed).fork(1);
  ModelParams expect = ModelParams::glorot(dims, rng, mean_row_nnz(g.features));
  REQUIRE((p.W1 - expect.W1).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((p.Wp2 - expect.Wp2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pretrain reduces the reconstruction loss") {
  AttributedGraph g = small_dataset();
  TrainConfig cfg = small_config();
  cfg.pretrain_epochs = 30;
  std::vector<double> history;
  pretrain(g, cfg, &history);
  REQUIRE(history.size() == 30);
  REQUIRE(history.back() < history.front());
}

TEST_CASE("pretrain is deterministic") {
  AttributedGraph g = small_dataset();
  TrainConfig cfg = small_config();
  ModelParams a = pretrain(g, cfg);
  ModelParams b = pretrain(g, cfg);
  REQUIRE((a.W1 - b.W1).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((a.W2 - b.W2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("init_centroids best-of-restarts monotonicity") {
  Mat h(20, 4);
  Rng rng(3);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 4; ++j) h(i, j) = rng.normal();
  double one = kmeans_cluster(h, 4, 11, 1).inertia;
  double twenty = kmeans_cluster(h, 4, 11, 20).inertia;
  REQUIRE(twenty <= one + 1e-12);
  REQUIRE_THROWS_AS(init_centroids(h, 21, 1, 0), DomainError);
}

TEST_CASE("train with lr = 0 leaves parameters at their pretrained values") {
  AttributedGraph g = small_dataset();
  TrainConfig cfg = small_config();
  cfg.learning_rate = 0.0;
  cfg.epochs = 1;
  TrainResult res = train(g, cfg);
  ModelParams expect = pretrain(g, cfg);
  REQUIRE((res.params.W1 - expect.W1).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((res.params.Wp1 - expect.Wp1).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(res.history.size() == 1);
  REQUIRE(std::isfinite(res.history[0].total));
}

TEST_CASE("train rejects a dataset without class counts") {
  AttributedGraph g = small_dataset();
  g.n_classes = 0;
  REQUIRE_THROWS_AS(train(g, small_config()), ConfigError);
}

TEST_CASE("train is deterministic for a fixed seed") {
  AttributedGraph g = small_dataset();
  TrainConfig cfg = small_config();
  TrainResult a = train(g, cfg);
  TrainResult b = train(g, cfg);
  REQUIRE(a.labels == b.labels);
  REQUIRE(a.history.back().total == b.history.back().total);
}

TEST_CASE("train drives the total loss down on an easy instance") {
  AttributedGraph g = small_dataset(9);
  TrainConfig cfg = small_config();
  cfg.epochs = 25;
  cfg.pretrain_epochs = 15;
  TrainResult res = train(g, cfg);
  REQUIRE(res.history.back().total < res.history.front().total);
  REQUIRE(res.labels.size() == 60);
  REQUIRE(res.metrics.has_value());
}

TEST_CASE("train records coarsening metadata") {
  AttributedGraph g = small_dataset();
  TrainConfig cfg = small_config();
  TrainResult res = train(g, cfg);
  REQUIRE(res.scale_meta.size() == 1);
  REQUIRE(res.scale_meta[0].scale == Approx(0.5));
  REQUIRE(res.scale_meta[0].target_nodes == 30);
}
