#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "deari/array.hpp"

namespace deari {

/// One experiment's settings, serialized with every run output. The variant
/// string selects the model family:
///   brits | brits+dml | deari | deari+dml |
///   bayesian-brits[+dml] | bayesian-deari[+dml]
/// brits variants pin the stack to one layer.
struct RunConfig {
  // model
  std::string variant = "deari";
  int64_t layers = 3;
  int64_t hidden = 108;
  int64_t encoder_depth = 2;
  int64_t heads = 4;
  int64_t ffn_width = 0;  // 0 -> 4H
  std::string cell = "gru";
  real consistency_weight = real(0.1);
  // metric learning
  std::string dml_strategy = "cls";
  real dml_margin = real(0.5);
  real dml_alpha = real(2);
  real dml_beta = real(50);
  real dml_epsilon = real(1);
  real dml_weight = real(0.1);
  bool dml_printed_sign = false;
  // bayesian
  real prior_std = real(1);
  real rho_init = real(-5);
  int64_t unfreeze_every = 100;
  int64_t open_window = 1;
  int64_t n_sim = 10;
  // data / evaluation protocol
  real mask_fraction = real(0.1);
  real val_fraction = real(0.1);
  real test_fraction = real(0.1);
  int64_t folds = 5;
  // optimization
  int64_t batch_size = 64;
  int64_t epochs = 50;
  int64_t patience = 10;
  real learning_rate = real(1e-3);
  real clip_norm = real(5);
  uint64_t seed = 1;

  bool is_bayesian() const { return variant.rfind("bayesian-", 0) == 0; }
  bool with_dml() const {
    return variant.size() >= 4 && variant.compare(variant.size() - 4, 4, "+dml") == 0;
  }
  bool is_deari() const { return variant.find("deari") != std::string::npos; }
  /// brits variants collapse to a single layer.
  int64_t effective_layers() const { return is_deari() ? layers : 1; }
};

void validate(const RunConfig& config);

/// Flat key-value text format: `key = value` lines, '#' comments. A
/// `config_version = 1` entry is required; unknown keys are an error.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
std::string config_to_text(const RunConfig& config);

/// Key-value view used for checkpoint headers.
std::map<std::string, std::string> config_to_map(const RunConfig& config);
RunConfig config_from_map(const std::map<std::string, std::string>& entries);

}  // namespace deari
