#pragma once

#include <string>

#include "deari/bayes.hpp"
#include "deari/config.hpp"
#include "deari/metric.hpp"
#include "deari/series.hpp"
#include "deari/stack.hpp"

namespace deari {

struct ForwardOptions {
  bool sample = false;    // Bayesian open mode: sampled weights + KL term
  uint64_t noise_seed = 0;
  int64_t n_batches = 1;  // minibatch weighting of the KL contribution
  bool with_dml = true;   // mined-pair term (skipped for single-sample batches)
};

struct ForwardResult {
  StackResult stack;
  NodePtr imputation_loss;  // pooled over layers
  NodePtr dml_term;         // null when unused
  NodePtr kl_term;          // null when deterministic/frozen
  NodePtr total_loss;
  int64_t mined_triplets = 0;
};

/// Configured model instance: parameter construction, loss assembly across
/// the deterministic, metric-learning and Bayesian variants, imputation and
/// Monte-Carlo prediction, checkpoint round-trip.
class Model {
 public:
  Model(const RunConfig& config, int64_t input_dim);

  const RunConfig& config() const { return config_; }
  int64_t input_dim() const { return input_dim_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  StackConfig stack_config() const;
  DmlConfig dml_config() const;

  ForwardResult forward(const SeriesBatch& batch, ParamBinding& binding,
                        const ForwardOptions& options = {});

  /// Deterministic imputation (Bayesian weights collapse to their means),
  /// processed in minibatches of config.batch_size.
  Array impute(const SeriesBatch& batch);

  /// n_sim independently sampled forward passes; per-cell mean/std/quantiles.
  /// Simulation seeds derive from `seed`, so aggregation is order-free.
  UncertaintyBand predict_with_uncertainty(const SeriesBatch& batch, int64_t n_sim,
                                           uint64_t seed);

  void save(const std::string& path) const;
  static Model load(const std::string& path);

 private:
  RunConfig config_;
  int64_t input_dim_;
  ParamStore params_;
};

}  // namespace deari
