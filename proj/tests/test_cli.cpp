#include <catch_amalgamated.hpp>

#include "mpccl/synthetic.hpp"
#include "support.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

using nlohmann::json;

namespace {

int run_cli_command(const std::string& args, const std::filesystem::path& stdout_to = {}) {
  std::string cmd = std::string(MPCCL_CLI_PATH) + " " + args;
  if (!stdout_to.empty()) cmd += " > " + stdout_to.string() + " 2>/dev/null";
  else cmd += " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path make_dataset(const testutil::TempDir& dir, std::uint64_t seed = 3) {
  mpccl::SyntheticSpec spec;
  spec.n_nodes = 48;
  spec.n_features = 10;
  spec.n_classes = 3;
  spec.topic_on = 0.4;
  spec.background_on = 0.05;
  spec.seed = seed;
  auto g = mpccl::make_planted_graph(spec);
  auto path = dir.path / "data";
  mpccl::write_dataset(g, path);
  return path;
}

}  // namespace

TEST_CASE("cli eval on identical files reports perfect scores", "[cli]") {
  testutil::TempDir dir("cli_eval");
  testutil::write_file(dir.path / "labels.csv", "0\n1\n2\n1\n0\n");
  auto out = dir.path / "out.json";
  int rc = run_cli_command("eval --pred " + (dir.path / "labels.csv").string() + " --truth " +
                               (dir.path / "labels.csv").string(),
                           out);
  REQUIRE(rc == 0);
  json j = json::parse(slurp(out));
  REQUIRE(j["acc"].get<double>() == 1.0);
  REQUIRE(j["nmi"].get<double>() == 1.0);
}

TEST_CASE("cli rejects unknown flags with exit code 2", "[cli]") {
  REQUIRE(run_cli_command("eval --nonsense x") == 2);
  REQUIRE(run_cli_command("bogus-subcommand") == 2);
}

TEST_CASE("cli coarsen writes the documented files", "[cli]") {
  testutil::TempDir dir("cli_coarsen");
  auto data = make_dataset(dir);
  auto out = dir.path / "coarse";
  int rc = run_cli_command("coarsen --input " + data.string() + " --scales 0.5,0.25 " +
                           "--min-nodes 4 --out " + out.string());
  REQUIRE(rc == 0);
  for (const char* tag : {"0.5", "0.25"}) {
    REQUIRE(std::filesystem::exists(out / ("coarse_" + std::string(tag) + "_edges.csv")));
    REQUIRE(std::filesystem::exists(out / ("coarse_" + std::string(tag) + "_map.csv")));
    json meta = json::parse(slurp(out / ("coarse_" + std::string(tag) + "_meta.json")));
    REQUIRE(meta.contains("achieved_nodes"));
    REQUIRE(meta.contains("steps"));
    REQUIRE(meta.contains("dropped_intra_pair_weight"));
  }
  json meta = json::parse(slurp(out / "coarse_0.5_meta.json"));
  if (!meta["early_stopped"].get<bool>())
    REQUIRE(meta["achieved_nodes"].get<int>() == 24);
}

TEST_CASE("cli verify-spectral emits a report per scale", "[cli]") {
  testutil::TempDir dir("cli_spectral");
  auto data = make_dataset(dir);
  auto report = dir.path / "spectral.json";
  int rc = run_cli_command("verify-spectral --input " + data.string() +
                           " --scales 0.5,0.25 --report " + report.string());
  REQUIRE(rc == 0);
  json j = json::parse(slurp(report));
  REQUIRE(j.is_array());
  REQUIRE(j.size() == 2);
  for (const auto& rep : j) {
    REQUIRE(rep.contains("interlacing_ok"));
    REQUIRE(rep.contains("kappa_original"));
    REQUIRE(rep.contains("spectral_error"));
    REQUIRE(rep["eigs_original"].size() == 48);
  }
}

TEST_CASE("cli train produces metrics.json and labels.csv deterministically", "[cli]") {
  testutil::TempDir dir("cli_train");
  auto data = make_dataset(dir);
  testutil::write_file(dir.path / "micro.toml",
                       "mask_p = 0.2\nlambda_reg = 0.01\nscales = [0.5]\nn_min = 4\n"
                       "weight_decay = 0.01\nlearning_rate = 0.001\ntau = 0.5\n"
                       "epochs = 4\npretrain_epochs = 2\nkmeans_restarts = 2\nseed = 11\n"
                       "h1 = 8\nh2 = 6\nhp = 10\nhz = 5\n");
  auto out1 = dir.path / "run1";
  auto out2 = dir.path / "run2";
  std::string base = "train --input " + data.string() + " --config " +
                     (dir.path / "micro.toml").string() + " --out ";
  REQUIRE(run_cli_command(base + out1.string()) == 0);
  REQUIRE(run_cli_command(base + out2.string()) == 0);

  REQUIRE(std::filesystem::exists(out1 / "metrics.json"));
  REQUIRE(std::filesystem::exists(out1 / "labels.csv"));
  REQUIRE(slurp(out1 / "labels.csv") == slurp(out2 / "labels.csv"));

  // reports agree except for wall-clock timings
  auto strip_timing = [](json j) {
    for (auto& run : j["runs"]) {
      run.erase("pretrain_seconds");
      run.erase("train_seconds");
      run.erase("seconds_per_epoch");
    }
    return j;
  };
  REQUIRE(strip_timing(json::parse(slurp(out1 / "metrics.json"))) ==
          strip_timing(json::parse(slurp(out2 / "metrics.json"))));

  json m = json::parse(slurp(out1 / "metrics.json"));
  REQUIRE(m.contains("final_metrics"));
  REQUIRE(m["runs"][0]["history"].size() == 4);
}

TEST_CASE("cli train exits 2 on a bad config", "[cli]") {
  testutil::TempDir dir("cli_badcfg");
  auto data = make_dataset(dir);
  testutil::write_file(dir.path / "bad.toml", "mask_p = 3.0\n");
  REQUIRE(run_cli_command("train --input " + data.string() + " --config " +
                          (dir.path / "bad.toml").string()) == 2);
  testutil::write_file(dir.path / "unknown.toml", "not_a_key = 1\n");
  REQUIRE(run_cli_command("train --input " + data.string() + " --config " +
                          (dir.path / "unknown.toml").string()) == 2);
}

TEST_CASE("cli pretrain writes a loss trace", "[cli]") {
  testutil::TempDir dir("cli_pretrain");
  auto data = make_dataset(dir);
  testutil::write_file(dir.path / "micro.toml",
                       "scales = [0.5]\nn_min = 4\npretrain_epochs = 3\nepochs = 1\n"
                       "h1 = 8\nh2 = 6\nhp = 10\nhz = 5\n");
  int rc = run_cli_command("pretrain --input " + data.string() + " --config " +
                           (dir.path / "micro.toml").string() + " --out " +
                           (dir.path / "pre").string());
  REQUIRE(rc == 0);
  json j = json::parse(slurp(dir.path / "pre" / "pretrain.json"));
  REQUIRE(j["loss_trace"].size() == 3);
}

TEST_CASE("cli gradcheck passes and reports its error", "[cli]") {
  testutil::TempDir dir("cli_gradcheck");
  auto out = dir.path / "gc.json";
  int rc = run_cli_command("gradcheck --seed 7", out);
  REQUIRE(rc == 0);
  json j = json::parse(slurp(out));
  REQUIRE(j["pass"].get<bool>());
  REQUIRE(j["max_rel_err"].get<double>() < 1e-4);
}
