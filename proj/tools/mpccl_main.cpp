// Command-line surface: coarsen, verify-spectral, pretrain, train, eval,
// gradcheck. All reports are JSON; exit code 2 flags configuration errors,
// 3 numeric failures.

#include "mpccl/coarsen.hpp"
#include "mpccl/config.hpp"
#include "mpccl/gradcheck.hpp"
#include "mpccl/graph.hpp"
#include "mpccl/metrics.hpp"
#include "mpccl/spectral.hpp"
#include "mpccl/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<double> parse_scales(const std::string& raw) {
  std::vector<double> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw mpccl::ConfigError("--scales: cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw mpccl::ConfigError("--scales: empty list");
  return out;
}

std::string format_scale(double s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", s);
  return buf;
}

std::string format_weight(double w) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", w);
  return buf;
}

std::vector<int> read_label_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw mpccl::IoError("cannot open label file: " + path.string());
  std::vector<int> labels;
  std::string line;
  while (std::getline(in, line)) {
    auto fields = mpccl::detail::split_fields(line);
    if (fields.empty()) continue;
    labels.push_back(static_cast<int>(mpccl::detail::parse_int(fields[0], path.string())));
  }
  if (labels.empty()) throw mpccl::FormatError("label file is empty: " + path.string());
  return labels;
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw mpccl::IoError("cannot write " + path.string());
  out << content;
}

json metrics_to_json(const mpccl::MetricsReport& m) {
  return json{{"acc", m.acc},       {"nmi", m.nmi},
              {"ari", m.ari},       {"f1", m.f1},
              {"n_samples", m.n_samples}, {"mapping", m.mapping}};
}

int cmd_coarsen(const std::string& input, const std::string& scales_raw, int min_nodes,
                const std::string& out_dir) {
  mpccl::AttributedGraph g = mpccl::load_graph(input);
  auto scales = parse_scales(scales_raw);
  auto coarse = mpccl::multi_scale_coarsen(g, scales, min_nodes);
  fs::create_directories(out_dir);
  for (const auto& cg : coarse) {
    std::string tag = format_scale(cg.scale);
    {
      std::ofstream edges(fs::path(out_dir) / ("coarse_" + tag + "_edges.csv"));
      for (int u = 0; u < cg.graph.n_nodes; ++u)
        for (const auto& [v, w] : cg.graph.adj[u])
          if (u < v) edges << u << ',' << v << ',' << format_weight(w) << '\n';
    }
    {
      std::ofstream map(fs::path(out_dir) / ("coarse_" + tag + "_map.csv"));
      for (size_t i = 0; i < cg.merge_map.assignment.size(); ++i)
        map << i << ',' << cg.merge_map.assignment[i] << '\n';
    }
    json meta{{"scale", cg.scale},
              {"target_nodes", cg.target_nodes},
              {"achieved_nodes", cg.graph.n_nodes},
              {"steps", cg.steps},
              {"dropped_intra_pair_weight", cg.dropped_weight},
              {"early_stopped", cg.early_stopped}};
    write_text(fs::path(out_dir) / ("coarse_" + tag + "_meta.json"), meta.dump(2) + "\n");
  }
  std::cout << "coarsened " << scales.size() << " scale(s) into " << out_dir << "\n";
  return 0;
}

// max componentwise intra-block feature gap, normalized by the larger of the
// two node feature norms; feeds the reported (never asserted) eta^2 bound
double intra_block_feature_gap(const mpccl::AttributedGraph& g, const mpccl::Partition& part) {
  double eta = 0.0;
  for (const auto& block : part.blocks) {
    for (size_t a = 0; a < block.size(); ++a)
      for (size_t b = a + 1; b < block.size(); ++b) {
        double gap = (g.features.row(block[a]) - g.features.row(block[b])).cwiseAbs().maxCoeff();
        double norm = std::max(g.features.row(block[a]).norm(), g.features.row(block[b]).norm());
        if (norm > 0.0) eta = std::max(eta, gap / norm);
      }
  }
  return eta;
}

int cmd_verify_spectral(const std::string& input, const std::string& scales_raw,
                        const std::string& report_path) {
  mpccl::AttributedGraph g = mpccl::load_graph(input);
  auto scales = parse_scales(scales_raw);
  mpccl::WeightedGraph wg = mpccl::edge_weights(g);
  mpccl::Mat lap = mpccl::laplacian_matrix(wg.to_sparse());
  auto coarse = mpccl::multi_scale_coarsen(g, scales, 32);

  json reports = json::array();
  for (const auto& cg : coarse) {
    mpccl::Partition part = mpccl::Partition::from_merge_map(cg.merge_map, cg.graph.n_nodes);
    double eta = intra_block_feature_gap(g, part);
    mpccl::SpectralReport rep = mpccl::verify_theorems(lap, part, eta);
    json j{{"scale", cg.scale},
           {"n_coarse", cg.graph.n_nodes},
           {"kappa_original", rep.kappa_original},
           {"kappa_coarse", rep.kappa_coarse},
           {"interlacing_ok", rep.interlacing_ok},
           {"condition_ok", rep.condition_ok},
           {"weyl_ok", rep.weyl_ok},
           {"spectral_error", rep.spectral_error},
           {"intra_bound", rep.intra_bound},
           {"eta", rep.eta},
           {"intra_weight", rep.intra_weight},
           {"connected", rep.connected}};
    j["eigs_original"] = std::vector<double>(rep.eigs_original.data(),
                                             rep.eigs_original.data() + rep.eigs_original.size());
    j["eigs_coarse"] =
        std::vector<double>(rep.eigs_coarse.data(), rep.eigs_coarse.data() + rep.eigs_coarse.size());
    reports.push_back(std::move(j));
    if (!rep.connected)
      std::cerr << "warning: graph disconnected at scale " << cg.scale
                << "; kappa uses lambda_2 regardless\n";
  }
  write_text(report_path, reports.dump(2) + "\n");
  std::cout << "wrote " << report_path << "\n";
  return 0;
}

int cmd_pretrain(const std::string& input, const std::string& config_path,
                 std::optional<std::uint64_t> seed, const std::string& out_dir) {
  mpccl::AttributedGraph g = mpccl::load_graph(input);
  mpccl::TrainConfig cfg =
      config_path.empty() ? mpccl::TrainConfig{} : mpccl::load_train_config(config_path);
  if (seed) cfg.seed = *seed;
  std::vector<double> history;
  auto t0 = std::chrono::steady_clock::now();
  mpccl::pretrain(g, cfg, &history);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json j{{"epochs", cfg.pretrain_epochs},
         {"loss_trace", history},
         {"final_loss", history.empty() ? 0.0 : history.back()},
         {"seconds", secs},
         {"seed", cfg.seed}};
  write_text(fs::path(out_dir) / "pretrain.json", j.dump(2) + "\n");
  std::cout << "pretrain done, final reconstruction loss "
            << (history.empty() ? 0.0 : history.back()) << "\n";
  return 0;
}

int cmd_train(const std::string& input, const std::string& config_path,
              std::optional<std::uint64_t> seed, int repeats, const std::string& out_dir,
              const std::string& dump_embeddings) {
  mpccl::AttributedGraph g = mpccl::load_graph(input);
  mpccl::TrainConfig cfg =
      config_path.empty() ? mpccl::TrainConfig{} : mpccl::load_train_config(config_path);
  if (seed) cfg.seed = *seed;
  if (repeats < 1) throw mpccl::ConfigError("--repeats must be >= 1");

  json runs = json::array();
  std::vector<mpccl::TrainResult> results;
  for (int r = 0; r < repeats; ++r) {
    mpccl::TrainConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + static_cast<std::uint64_t>(r);
    mpccl::TrainResult res = mpccl::train(g, run_cfg);
    json history = json::array();
    for (const auto& e : res.history)
      history.push_back({{"total", e.total},
                         {"contrastive", e.contrastive},
                         {"laplacian", e.laplacian},
                         {"clustering", e.clustering},
                         {"reconstruction", e.reconstruction}});
    json scale_meta = json::array();
    for (const auto& s : res.scale_meta)
      scale_meta.push_back({{"scale", s.scale},
                            {"target_nodes", s.target_nodes},
                            {"achieved_nodes", s.achieved_nodes},
                            {"steps", s.steps},
                            {"dropped_weight", s.dropped_weight},
                            {"early_stopped", s.early_stopped}});
    json run{{"seed", run_cfg.seed},
             {"pretrain_loss", res.pretrain_history},
             {"history", history},
             {"scales", scale_meta},
             {"pretrain_seconds", res.pretrain_seconds},
             {"train_seconds", res.train_seconds},
             {"seconds_per_epoch", res.train_seconds / std::max<size_t>(1, res.history.size())}};
    if (res.metrics) run["metrics"] = metrics_to_json(*res.metrics);
    runs.push_back(std::move(run));
    results.push_back(std::move(res));
  }

  // labels.csv carries the best run when ground truth is present
  size_t best = 0;
  for (size_t r = 1; r < results.size(); ++r)
    if (results[r].metrics && results[best].metrics &&
        results[r].metrics->acc > results[best].metrics->acc)
      best = r;

  json report{{"config", config_path.empty() ? "(defaults)" : config_path},
              {"dataset", input},
              {"repeats", repeats},
              {"best_run", best},
              {"runs", runs}};
  if (results[best].metrics) report["final_metrics"] = metrics_to_json(*results[best].metrics);
  if (repeats > 1 && results[0].metrics) {
    auto agg = [&](auto pick) {
      double mean = 0.0, sq = 0.0;
      for (const auto& r : results) mean += pick(*r.metrics);
      mean /= repeats;
      for (const auto& r : results) sq += std::pow(pick(*r.metrics) - mean, 2);
      return json{{"mean", mean}, {"std", std::sqrt(sq / repeats)}};
    };
    report["aggregate"] = {{"acc", agg([](const auto& m) { return m.acc; })},
                           {"nmi", agg([](const auto& m) { return m.nmi; })},
                           {"ari", agg([](const auto& m) { return m.ari; })},
                           {"f1", agg([](const auto& m) { return m.f1; })}};
  }
  write_text(fs::path(out_dir) / "metrics.json", report.dump(2) + "\n");

  std::string labels_text;
  for (int l : results[best].labels) labels_text += std::to_string(l) + "\n";
  write_text(fs::path(out_dir) / "labels.csv", labels_text);

  if (!dump_embeddings.empty()) {
    mpccl::SpMat ahat = mpccl::normalize_adjacency(g.adjacency);
    mpccl::Mat h = mpccl::gcn_forward(g.features, ahat, results[best].params);
    std::ostringstream os;
    os.precision(17);
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
      for (Eigen::Index j = 0; j < h.cols(); ++j) {
        if (j) os << ',';
        os << h(i, j);
      }
      os << '\n';
    }
    write_text(dump_embeddings, os.str());
  }

  if (results[best].metrics)
    std::cout << "train done: acc=" << results[best].metrics->acc
              << " nmi=" << results[best].metrics->nmi << " ari=" << results[best].metrics->ari
              << " f1=" << results[best].metrics->f1 << "\n";
  else
    std::cout << "train done (no ground-truth labels; metrics skipped)\n";
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& truth_path,
             const std::string& out_path) {
  auto pred = read_label_file(pred_path);
  auto truth = read_label_file(truth_path);
  mpccl::MetricsReport m = mpccl::clustering_metrics(pred, truth);
  json j = metrics_to_json(m);
  std::cout << j.dump(2) << "\n";
  if (!out_path.empty()) write_text(out_path, j.dump(2) + "\n");
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& out_path) {
  mpccl::GradCheckReport rep = mpccl::run_gradcheck(seed);
  json j{{"max_rel_err", rep.max_rel_err},
         {"worst_slot", rep.worst_slot},
         {"coordinates", rep.n_coordinates},
         {"seconds", rep.seconds},
         {"seed", rep.seed_used},
         {"tolerance", 1e-4},
         {"pass", rep.max_rel_err < 1e-4}};
  std::cout << j.dump(2) << "\n";
  if (!out_path.empty()) write_text(out_path, j.dump(2) + "\n");
  return rep.max_rel_err < 1e-4 ? 0 : 1;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"MPCCL attributed-graph clustering"};
  app.require_subcommand(1);

  std::string input, out_dir = "result", scales_raw, config_path, report_path;
  std::string pred_path, truth_path, dump_embeddings, out_path;
  int min_nodes = 32, repeats = 1;
  std::uint64_t seed_value = 0;
  bool seed_given = false;

  auto* coarsen = app.add_subcommand("coarsen", "multi-scale graph coarsening");
  coarsen->add_option("--input", input, "dataset directory")->required();
  coarsen->add_option("--scales", scales_raw, "comma-separated scales, e.g. 0.5,0.25,0.1")
      ->required();
  coarsen->add_option("--min-nodes", min_nodes, "minimum node count (default 32)");
  coarsen->add_option("--out", out_dir, "output directory")->required();

  auto* verify = app.add_subcommand("verify-spectral", "coarsening theorem reports");
  verify->add_option("--input", input, "dataset directory")->required();
  verify->add_option("--scales", scales_raw, "comma-separated scales")->required();
  verify->add_option("--report", report_path, "output JSON path")->required();

  auto* pre = app.add_subcommand("pretrain", "encoder pre-training");
  pre->add_option("--input", input, "dataset directory")->required();
  pre->add_option("--config", config_path, "config file");
  pre->add_option("--seed", seed_value, "seed override")->each([&](const std::string&) {
    seed_given = true;
  });
  pre->add_option("--out", out_dir, "output directory");

  auto* train = app.add_subcommand("train", "full training run");
  train->add_option("--input", input, "dataset directory")->required();
  train->add_option("--config", config_path, "config file");
  train->add_option("--seed", seed_value, "seed override")->each([&](const std::string&) {
    seed_given = true;
  });
  train->add_option("--repeats", repeats, "independent runs (default 1)");
  train->add_option("--out", out_dir, "output directory (default result/)");
  train->add_option("--dump-embeddings", dump_embeddings, "write final encoder output CSV");

  auto* eval = app.add_subcommand("eval", "clustering metrics from label files");
  eval->add_option("--pred", pred_path, "predicted labels file")->required();
  eval->add_option("--truth", truth_path, "ground-truth labels file")->required();
  eval->add_option("--out", out_path, "also write the report here");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gc->add_option("--seed", seed_value, "instance seed");
  gc->add_option("--out", out_path, "also write the report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    mpccl::apply_thread_cap();
    std::optional<std::uint64_t> seed_opt;
    if (seed_given) seed_opt = seed_value;
    if (coarsen->parsed()) return cmd_coarsen(input, scales_raw, min_nodes, out_dir);
    if (verify->parsed()) return cmd_verify_spectral(input, scales_raw, report_path);
    if (pre->parsed()) return cmd_pretrain(input, config_path, seed_opt, out_dir);
    if (train->parsed())
      return cmd_train(input, config_path, seed_opt, repeats, out_dir, dump_embeddings);
    if (eval->parsed()) return cmd_eval(pred_path, truth_path, out_path);
    if (gc->parsed()) return cmd_gradcheck(seed_value, out_path);
  } catch (const mpccl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mpccl::NumericsError& e) {
    std::cerr << "numerics error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#ifndef MPCCL_NO_CLI_MAIN
int main(int argc, char** argv) { return run_cli(argc, argv); }
#endif
