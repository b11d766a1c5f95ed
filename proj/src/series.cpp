#include "deari/series.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "deari/rng.hpp"

namespace deari {

using nlohmann::json;

int64_t SeriesBatch::observed_count() const {
  int64_t n = 0;
  for (int64_t i = 0; i < mask.numel(); ++i) n += mask[i] != 0 ? 1 : 0;
  return n;
}

int64_t SeriesBatch::eval_count() const {
  int64_t n = 0;
  for (int64_t i = 0; i < eval_mask.numel(); ++i) n += eval_mask[i] != 0 ? 1 : 0;
  return n;
}

Array build_mask(const Array& raw) {
  Array m(raw.shape());
  for (int64_t i = 0; i < raw.numel(); ++i) m[i] = std::isnan(raw[i]) ? real(0) : real(1);
  return m;
}

SeriesBatch make_batch(const Array& raw, const Array& timestamps,
                       std::vector<std::string> feature_names) {
  if (raw.rank() != 3) throw std::invalid_argument("make_batch: raw must be [B,T,D]");
  if (timestamps.rank() != 2 || timestamps.dim(0) != raw.dim(0) ||
      timestamps.dim(1) != raw.dim(1)) {
    throw std::invalid_argument("make_batch: timestamps must be [B,T]");
  }
  SeriesBatch batch;
  batch.mask = build_mask(raw);
  batch.values = raw;
  for (int64_t i = 0; i < batch.values.numel(); ++i) {
    if (batch.mask[i] == 0) batch.values[i] = 0;
  }
  batch.timestamps = timestamps;
  if (feature_names.empty()) {
    for (int64_t d = 0; d < raw.dim(2); ++d) feature_names.push_back("f" + std::to_string(d + 1));
  }
  batch.feature_names = std::move(feature_names);
  refresh_deltas(batch);
  return batch;
}

Array compute_delta(const Array& timestamps, const Array& mask, Direction direction) {
  if (timestamps.rank() != 2 || mask.rank() != 3 || mask.dim(0) != timestamps.dim(0) ||
      mask.dim(1) != timestamps.dim(1)) {
    throw std::invalid_argument("compute_delta: timestamps [B,T] and mask [B,T,D] required");
  }
  const int64_t b = mask.dim(0), t = mask.dim(1), d = mask.dim(2);
  Array delta({b, t, d});
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t ti = 1; ti < t; ++ti) {
      if (timestamps.at(bi, ti) < timestamps.at(bi, ti - 1)) {
        throw std::invalid_argument("compute_delta: decreasing timestamps in sample " +
                                    std::to_string(bi) + " at step " + std::to_string(ti));
      }
    }
    for (int64_t di = 0; di < d; ++di) {
      if (direction == Direction::forward) {
        delta.at(bi, 0, di) = 0;
        for (int64_t ti = 1; ti < t; ++ti) {
          const real gap = timestamps.at(bi, ti) - timestamps.at(bi, ti - 1);
          const real carry = mask.at(bi, ti - 1, di) == 0 ? delta.at(bi, ti - 1, di) : real(0);
          delta.at(bi, ti, di) = gap + carry;
        }
      } else {
        // Same recurrence over the reversed sequence; rev position i maps to
        // original step t-1-i and the result is stored back in forward order.
        delta.at(bi, t - 1, di) = 0;
        for (int64_t i = 1; i < t; ++i) {
          const int64_t orig = t - 1 - i;
          const real gap = timestamps.at(bi, orig + 1) - timestamps.at(bi, orig);
          const real carry = mask.at(bi, orig + 1, di) == 0 ? delta.at(bi, orig + 1, di) : real(0);
          delta.at(bi, orig, di) = gap + carry;
        }
      }
    }
  }
  return delta;
}

void refresh_deltas(SeriesBatch& batch) {
  batch.delta_fwd = compute_delta(batch.timestamps, batch.mask, Direction::forward);
  batch.delta_bwd = compute_delta(batch.timestamps, batch.mask, Direction::backward);
}

NormStats fit_normalize(const SeriesBatch& batch) {
  const int64_t d = batch.features();
  NormStats stats;
  stats.mean.assign(static_cast<size_t>(d), 0);
  stats.stdev.assign(static_cast<size_t>(d), 1);
  for (int64_t di = 0; di < d; ++di) {
    real sum = 0;
    int64_t count = 0;
    for (int64_t bi = 0; bi < batch.samples(); ++bi) {
      for (int64_t ti = 0; ti < batch.steps(); ++ti) {
        if (batch.mask.at(bi, ti, di) != 0) {
          sum += batch.values.at(bi, ti, di);
          ++count;
        }
      }
    }
    if (count == 0) continue;
    const real mean = sum / static_cast<real>(count);
    real sq = 0;
    for (int64_t bi = 0; bi < batch.samples(); ++bi) {
      for (int64_t ti = 0; ti < batch.steps(); ++ti) {
        if (batch.mask.at(bi, ti, di) != 0) {
          const real dd = batch.values.at(bi, ti, di) - mean;
          sq += dd * dd;
        }
      }
    }
    const real var = sq / static_cast<real>(count);
    stats.mean[static_cast<size_t>(di)] = mean;
    stats.stdev[static_cast<size_t>(di)] = var > 0 ? std::sqrt(var) : real(1);
  }
  return stats;
}

void apply_normalize(SeriesBatch& batch, const NormStats& stats) {
  const int64_t d = batch.features();
  if (static_cast<int64_t>(stats.mean.size()) != d) {
    throw std::invalid_argument("apply_normalize: stats arity mismatch");
  }
  for (int64_t bi = 0; bi < batch.samples(); ++bi) {
    for (int64_t ti = 0; ti < batch.steps(); ++ti) {
      for (int64_t di = 0; di < d; ++di) {
        const size_t sd = static_cast<size_t>(di);
        if (batch.mask.at(bi, ti, di) != 0) {
          batch.values.at(bi, ti, di) =
              (batch.values.at(bi, ti, di) - stats.mean[sd]) / stats.stdev[sd];
        }
        if (batch.has_eval() && batch.eval_mask.at(bi, ti, di) != 0) {
          batch.eval_values.at(bi, ti, di) =
              (batch.eval_values.at(bi, ti, di) - stats.mean[sd]) / stats.stdev[sd];
        }
      }
    }
  }
  batch.stats = stats;
}

real denormalize_value(const NormStats& stats, int64_t feature, real v) {
  if (stats.mean.empty()) return v;
  const size_t d = static_cast<size_t>(feature);
  return v * stats.stdev[d] + stats.mean[d];
}

void apply_eval_mask(SeriesBatch& batch, real fraction, uint64_t seed) {
  if (fraction < 0 || fraction > 1) {
    throw std::invalid_argument("apply_eval_mask: fraction must be in [0,1]");
  }
  if (!batch.has_eval()) {
    batch.eval_mask = Array(batch.values.shape());
    batch.eval_values = Array(batch.values.shape());
  }
  batch.mask_seed = seed;
  Rng rng(derive_seed(seed, 0x6d61736bull));
  for (int64_t bi = 0; bi < batch.samples(); ++bi) {
    for (int64_t ti = 0; ti < batch.steps(); ++ti) {
      for (int64_t di = 0; di < batch.features(); ++di) {
        if (batch.mask.at(bi, ti, di) == 0) continue;
        if (rng.uniform(0, 1) < fraction) {
          batch.eval_mask.at(bi, ti, di) = 1;
          batch.eval_values.at(bi, ti, di) = batch.values.at(bi, ti, di);
          batch.mask.at(bi, ti, di) = 0;
          batch.values.at(bi, ti, di) = 0;
        }
      }
    }
  }
  refresh_deltas(batch);
}

SeriesBatch select_samples(const SeriesBatch& batch, const std::vector<int64_t>& indices) {
  const int64_t t = batch.steps(), d = batch.features();
  const int64_t b = static_cast<int64_t>(indices.size());
  SeriesBatch out;
  out.values = Array({b, t, d});
  out.mask = Array({b, t, d});
  out.delta_fwd = Array({b, t, d});
  out.delta_bwd = Array({b, t, d});
  out.timestamps = Array({b, t});
  if (batch.has_eval()) {
    out.eval_mask = Array({b, t, d});
    out.eval_values = Array({b, t, d});
  }
  for (int64_t i = 0; i < b; ++i) {
    const int64_t src = indices[static_cast<size_t>(i)];
    if (src < 0 || src >= batch.samples()) {
      throw std::out_of_range("select_samples: index " + std::to_string(src));
    }
    for (int64_t ti = 0; ti < t; ++ti) {
      out.timestamps.at(i, ti) = batch.timestamps.at(src, ti);
      for (int64_t di = 0; di < d; ++di) {
        out.values.at(i, ti, di) = batch.values.at(src, ti, di);
        out.mask.at(i, ti, di) = batch.mask.at(src, ti, di);
        out.delta_fwd.at(i, ti, di) = batch.delta_fwd.at(src, ti, di);
        out.delta_bwd.at(i, ti, di) = batch.delta_bwd.at(src, ti, di);
        if (batch.has_eval()) {
          out.eval_mask.at(i, ti, di) = batch.eval_mask.at(src, ti, di);
          out.eval_values.at(i, ti, di) = batch.eval_values.at(src, ti, di);
        }
      }
    }
  }
  out.feature_names = batch.feature_names;
  out.stats = batch.stats;
  out.mask_seed = batch.mask_seed;
  return out;
}

static json field_json(const Array& a) { return a.buffer(); }

static Array field_from_json(const json& j, Shape shape) {
  return Array(std::move(shape), j.get<std::vector<real>>());
}

void save_archive(const SeriesBatch& batch, const std::string& path) {
  json j;
  j["format_version"] = 1;
  j["b"] = batch.samples();
  j["t"] = batch.steps();
  j["d"] = batch.features();
  j["feature_names"] = batch.feature_names;
  j["mask_seed"] = batch.mask_seed;
  j["stats"] = {{"mean", batch.stats.mean}, {"stdev", batch.stats.stdev}};
  j["values"] = field_json(batch.values);
  j["mask"] = field_json(batch.mask);
  j["delta_fwd"] = field_json(batch.delta_fwd);
  j["delta_bwd"] = field_json(batch.delta_bwd);
  j["timestamps"] = field_json(batch.timestamps);
  if (batch.has_eval()) {
    j["eval_mask"] = field_json(batch.eval_mask);
    j["eval_values"] = field_json(batch.eval_values);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write archive: " + path);
  out << j.dump();
}

SeriesBatch load_archive(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read archive: " + path);
  json j = json::parse(in);
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1) {
    throw std::runtime_error("unsupported archive format in " + path);
  }
  const int64_t b = j.at("b"), t = j.at("t"), d = j.at("d");
  SeriesBatch batch;
  batch.values = field_from_json(j.at("values"), {b, t, d});
  batch.mask = field_from_json(j.at("mask"), {b, t, d});
  batch.delta_fwd = field_from_json(j.at("delta_fwd"), {b, t, d});
  batch.delta_bwd = field_from_json(j.at("delta_bwd"), {b, t, d});
  batch.timestamps = field_from_json(j.at("timestamps"), {b, t});
  if (j.contains("eval_mask")) {
    batch.eval_mask = field_from_json(j.at("eval_mask"), {b, t, d});
    batch.eval_values = field_from_json(j.at("eval_values"), {b, t, d});
  }
  batch.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  batch.stats.mean = j.at("stats").at("mean").get<std::vector<real>>();
  batch.stats.stdev = j.at("stats").at("stdev").get<std::vector<real>>();
  batch.mask_seed = j.at("mask_seed").get<uint64_t>();
  return batch;
}

}  // namespace deari
