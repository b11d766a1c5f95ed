#pragma once

#include <vector>

#include "deari/model.hpp"

namespace deari {

/// Adam with bias correction; state slots follow store order. Gaussian
/// parameters get independent slots for mu and rho.
class Adam {
 public:
  explicit Adam(real lr, real beta1 = real(0.9), real beta2 = real(0.999),
                real eps = real(1e-8));
  void step(ParamStore& store);

 private:
  real lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  struct Slot {
    Array m, v;
  };
  std::map<std::string, Slot> value_slots_;
  std::map<std::string, Slot> rho_slots_;
};

/// Scale all gradients so the global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
real clip_gradients(ParamStore& store, real max_norm);

/// Held-out-cell metrics; denormalized units first, normalized alongside.
struct MetricsEntry {
  real mae = 0;
  real mre = 0;
  real mae_norm = 0;
  real mre_norm = 0;
  int64_t cells = 0;
};

/// MAE = sum |imputed - truth| / count over eval cells;
/// MRE = sum |imputed - truth| / sum |truth|. Errors on an empty eval mask.
MetricsEntry evaluate(const Array& imputation, const SeriesBatch& batch);

struct EpochStat {
  int64_t epoch = 0;
  real train_loss = 0;
  real val_mae = 0;
  bool improved = false;
};

struct TrainReport {
  MetricsEntry test;
  std::vector<EpochStat> curve;
  int64_t best_epoch = 0;
  real best_val_mae = 0;
  int64_t steps = 0;
  int64_t param_scalars = 0;
  real wall_seconds = 0;  // informational; not part of the reproducible content
};

/// Deterministic sample split from the run seed.
struct SampleSplit {
  std::vector<int64_t> train, val, test;
};
SampleSplit split_samples(int64_t count, real val_fraction, real test_fraction, uint64_t seed);

/// Stable fold id per sample: hash of (sample index, seed) mod k.
std::vector<int64_t> fold_assignment(int64_t count, int64_t k, uint64_t seed);

/// Adam training on the total loss with gradient clipping, the Bayesian
/// freeze/unfreeze schedule, early stopping on validation MAE (patience from
/// the config), and best-checkpoint retention. Aborts on non-finite loss.
TrainReport train(Model& model, const SeriesBatch& train_data, const SeriesBatch& val_data,
                  const SeriesBatch& test_data);

/// Split the prepared batch by the config fractions and train.
TrainReport run_training(Model& model, const SeriesBatch& data);

struct CrossValidationReport {
  std::vector<TrainReport> folds;
  real mae_mean = 0, mae_std = 0;
  real mre_mean = 0, mre_std = 0;
};

CrossValidationReport cross_validate(const RunConfig& config, const SeriesBatch& data, int64_t k);

struct SweepRow {
  int64_t layers = 0;
  real mae = 0;
  real mre = 0;
  int64_t param_scalars = 0;
  real wall_seconds = 0;
};

/// Train one model per depth with shared seeds and budget.
std::vector<SweepRow> depth_sweep(const RunConfig& base, const SeriesBatch& data,
                                  const std::vector<int64_t>& layer_list);

}  // namespace deari
