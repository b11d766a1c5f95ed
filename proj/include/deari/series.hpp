#pragma once

#include <string>
#include <vector>

#include "deari/array.hpp"

namespace deari {

enum class Direction { forward, backward };

/// Per-feature normalization statistics, fitted over observed cells only.
/// Zero-variance features get std = 1.
struct NormStats {
  std::vector<real> mean;
  std::vector<real> stdev;
};

/// The unit of ingestion and training: values with observation mask, per
/// direction time-gap matrices, and (after masking) the held-out evaluation
/// cells with their ground truth kept out of the training path.
///
/// Invariants: mask[c]=0 implies values[c]=0 (neutral fill); eval cells were
/// observed in the raw data and are removed from the training mask; deltas
/// satisfy the gap recurrence against `mask` (see compute_delta).
struct SeriesBatch {
  Array values;       // [B,T,D]
  Array mask;         // [B,T,D] in {0,1}
  Array delta_fwd;    // [B,T,D]
  Array delta_bwd;    // [B,T,D], forward time order; reversed at consumption
  Array timestamps;   // [B,T], monotone non-decreasing per sample
  Array eval_mask;    // [B,T,D] in {0,1}; empty until apply_eval_mask
  Array eval_values;  // [B,T,D]; ground truth at eval cells, 0 elsewhere
  std::vector<std::string> feature_names;
  NormStats stats;  // identity (empty) until apply_normalize
  uint64_t mask_seed = 0;

  int64_t samples() const { return values.rank() == 3 ? values.dim(0) : 0; }
  int64_t steps() const { return values.rank() == 3 ? values.dim(1) : 0; }
  int64_t features() const { return values.rank() == 3 ? values.dim(2) : 0; }
  bool has_eval() const { return eval_mask.numel() > 0; }
  bool normalized() const { return !stats.mean.empty(); }
  int64_t observed_count() const;
  int64_t eval_count() const;
};

/// Build a batch from raw values where missing cells are NaN. Missing cells
/// are zero-filled, the mask is derived, and both delta matrices computed.
SeriesBatch make_batch(const Array& raw, const Array& timestamps,
                       std::vector<std::string> feature_names = {});

/// Observation mask from a NaN-sentinel raw array: 1 iff the cell is a number.
Array build_mask(const Array& raw);

/// Elapsed time since the last observed cell of the same feature.
/// delta[0]=0; delta[t] = gap(t) + (mask[t-1]==0 ? delta[t-1] : 0) with
/// gap(t) = ts[t]-ts[t-1]. The backward variant applies the same recurrence
/// on the time-reversed sequence and returns the result re-reversed into
/// forward order. Throws on decreasing timestamps.
Array compute_delta(const Array& timestamps, const Array& mask, Direction direction);

/// Recompute both delta matrices from the current mask.
void refresh_deltas(SeriesBatch& batch);

NormStats fit_normalize(const SeriesBatch& batch);
/// Normalize observed values (and eval ground truth) in place; missing cells
/// stay at the neutral fill 0.
void apply_normalize(SeriesBatch& batch, const NormStats& stats);
real denormalize_value(const NormStats& stats, int64_t feature, real v);

/// Move a seeded Bernoulli(p) subset of observed cells into the eval mask:
/// flagged in eval_mask, removed from mask, zero-filled in values, ground
/// truth retained in eval_values. Deltas are recomputed against the reduced
/// mask. Deterministic for a fixed seed.
void apply_eval_mask(SeriesBatch& batch, real fraction, uint64_t seed);

/// Copy the selected samples into a new batch (split/minibatch construction).
SeriesBatch select_samples(const SeriesBatch& batch, const std::vector<int64_t>& indices);

/// Lossless JSON archive of the full batch (values, masks, deltas, stats,
/// seed). Layout: {"format_version":1, "b","t","d", "feature_names",
/// "stats":{...}, "mask_seed", and one flat row-major array per field}.
void save_archive(const SeriesBatch& batch, const std::string& path);
SeriesBatch load_archive(const std::string& path);

}  // namespace deari
