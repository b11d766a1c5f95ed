#include "deari/baselines.hpp"

#include <vector>

namespace deari {

BaselineMethod parse_baseline(const std::string& name) {
  if (name == "mean") return BaselineMethod::mean;
  if (name == "locf") return BaselineMethod::locf;
  if (name == "linear") return BaselineMethod::linear;
  throw std::invalid_argument("unknown baseline: '" + name + "' (expected mean|locf|linear)");
}

Array baseline_impute(const SeriesBatch& batch, BaselineMethod method) {
  const int64_t b = batch.samples(), t = batch.steps(), d = batch.features();
  std::vector<real> feature_mean(static_cast<size_t>(d), 0);
  for (int64_t di = 0; di < d; ++di) {
    real sum = 0;
    int64_t count = 0;
    for (int64_t bi = 0; bi < b; ++bi) {
      for (int64_t ti = 0; ti < t; ++ti) {
        if (batch.mask.at(bi, ti, di) != 0) {
          sum += batch.values.at(bi, ti, di);
          ++count;
        }
      }
    }
    feature_mean[static_cast<size_t>(di)] = count > 0 ? sum / static_cast<real>(count) : real(0);
  }

  Array out(batch.values.shape());
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t di = 0; di < d; ++di) {
      const real fallback = feature_mean[static_cast<size_t>(di)];
      // observation list of this (sample, feature) column
      std::vector<int64_t> obs;
      for (int64_t ti = 0; ti < t; ++ti) {
        if (batch.mask.at(bi, ti, di) != 0) obs.push_back(ti);
      }
      size_t next = 0;
      for (int64_t ti = 0; ti < t; ++ti) {
        if (batch.mask.at(bi, ti, di) != 0) {
          out.at(bi, ti, di) = batch.values.at(bi, ti, di);
          continue;
        }
        switch (method) {
          case BaselineMethod::mean:
            out.at(bi, ti, di) = fallback;
            break;
          case BaselineMethod::locf: {
            int64_t prev = -1;
            for (int64_t o : obs) {
              if (o < ti) prev = o;
              else break;
            }
            out.at(bi, ti, di) = prev >= 0 ? batch.values.at(bi, prev, di) : fallback;
            break;
          }
          case BaselineMethod::linear: {
            while (next < obs.size() && obs[next] < ti) ++next;
            const int64_t after = next < obs.size() ? obs[next] : -1;
            const int64_t before = next > 0 ? obs[next - 1] : -1;
            if (before >= 0 && after >= 0) {
              const real t0 = batch.timestamps.at(bi, before);
              const real t1 = batch.timestamps.at(bi, after);
              const real v0 = batch.values.at(bi, before, di);
              const real v1 = batch.values.at(bi, after, di);
              const real w = t1 > t0 ? (batch.timestamps.at(bi, ti) - t0) / (t1 - t0) : real(0.5);
              out.at(bi, ti, di) = v0 + (v1 - v0) * w;
            } else if (before >= 0) {
              out.at(bi, ti, di) = batch.values.at(bi, before, di);
            } else if (after >= 0) {
              out.at(bi, ti, di) = batch.values.at(bi, after, di);
            } else {
              out.at(bi, ti, di) = fallback;
            }
            break;
          }
        }
      }
    }
  }
  return out;
}

}  // namespace deari
