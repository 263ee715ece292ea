#pragma once

#include "mpccl/common.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace mpccl {

struct TrainConfig {
  double mask_p = 0.1;
  double lambda_reg = 0.0005;
  std::vector<double> scales{0.2, 0.1};
  int n_min = 32;
  double weight_decay = 1e-2;
  double learning_rate = 0.0005;
  double pretrain_lr = 0.0005;
  double tau = 0.5;
  double dof_v = 1.0;
  double eps = 1e-8;  // contrastive smoothing term
  double alpha = 1.0, beta = 1.0, gamma = 1.0;
  int pretrain_epochs = 50;
  int epochs = 200;
  int kmeans_restarts = 20;
  int kmeans_iters = 100;
  std::uint64_t seed = 0;
  int h1 = 256, h2 = 512, hp = 1024, hz = 256;
  bool one_to_many = true;
  // scale the KL and reconstruction terms by 1/N and 1/N^2 inside the
  // trainer's objective (mean-reduction semantics); the loss values reported
  // per epoch stay raw
  bool normalized_loss_scales = true;

  void validate() const {
    if (!(mask_p >= 0.0 && mask_p <= 1.0)) throw ConfigError("mask_p must lie in [0, 1]");
    if (!(learning_rate > 0.0) && learning_rate != 0.0)
      throw ConfigError("learning_rate must be >= 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (pretrain_epochs < 0) throw ConfigError("pretrain_epochs must be >= 0");
    if (n_min < 1) throw ConfigError("n_min must be >= 1");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(dof_v > 0.0)) throw ConfigError("dof_v must be positive");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) throw ConfigError("loss weights must be >= 0");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (kmeans_restarts < 1) throw ConfigError("kmeans_restarts must be >= 1");
    if (h1 < 1 || h2 < 1 || hp < 1 || hz < 1) throw ConfigError("hidden sizes must be >= 1");
    for (size_t i = 0; i < scales.size(); ++i) {
      if (!(scales[i] > 0.0) || scales[i] > 1.0) throw ConfigError("scales must lie in (0, 1]");
      if (i > 0 && scales[i] > scales[i - 1])
        throw ConfigError("scales must be sorted descending");
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<double> parse_double_array(const std::string& raw, const std::string& key) {
  std::string s = trim(raw);
  if (s.size() < 2 || s.front() != '[' || s.back() != ']')
    throw ConfigError(key + ": expected an array like [0.2, 0.1]");
  s = s.substr(1, s.size() - 2);
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError(key + ": cannot parse '" + item + "'");
    }
  }
  return out;
}

}  // namespace detail

// Flat `key = value` config file (TOML-compatible subset: scalars, one level
// of numeric arrays, # comments). Unknown keys are rejected.
inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string val = detail::trim(line.substr(eq + 1));

    auto as_double = [&](double& slot) {
      try {
        slot = std::stod(val);
      } catch (const std::exception&) {
        throw ConfigError(key + ": cannot parse '" + val + "'");
      }
    };
    auto as_int = [&](int& slot) {
      try {
        slot = std::stoi(val);
      } catch (const std::exception&) {
        throw ConfigError(key + ": cannot parse '" + val + "'");
      }
    };

    if (key == "mask_p") as_double(cfg.mask_p);
    else if (key == "lambda_reg") as_double(cfg.lambda_reg);
    else if (key == "scales") cfg.scales = detail::parse_double_array(val, key);
    else if (key == "n_min") as_int(cfg.n_min);
    else if (key == "weight_decay") as_double(cfg.weight_decay);
    else if (key == "learning_rate") as_double(cfg.learning_rate);
    else if (key == "pretrain_lr") as_double(cfg.pretrain_lr);
    else if (key == "tau") as_double(cfg.tau);
    else if (key == "dof_v") as_double(cfg.dof_v);
    else if (key == "eps") as_double(cfg.eps);
    else if (key == "alpha") as_double(cfg.alpha);
    else if (key == "beta") as_double(cfg.beta);
    else if (key == "gamma") as_double(cfg.gamma);
    else if (key == "pretrain_epochs") as_int(cfg.pretrain_epochs);
    else if (key == "epochs") as_int(cfg.epochs);
    else if (key == "kmeans_restarts") as_int(cfg.kmeans_restarts);
    else if (key == "kmeans_iters") as_int(cfg.kmeans_iters);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "h1") as_int(cfg.h1);
    else if (key == "h2") as_int(cfg.h2);
    else if (key == "hp") as_int(cfg.hp);
    else if (key == "hz") as_int(cfg.hz);
    else if (key == "one_to_many") {
      if (val == "true") cfg.one_to_many = true;
      else if (val == "false") cfg.one_to_many = false;
      else throw ConfigError("one_to_many: expected true or false");
    } else if (key == "normalized_loss_scales") {
      if (val == "true") cfg.normalized_loss_scales = true;
      else if (val == "false") cfg.normalized_loss_scales = false;
      else throw ConfigError("normalized_loss_scales: expected true or false");
    } else {
      throw ConfigError(path.string() + ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace mpccl
