#pragma once

#include <string>

#include "deari/series.hpp"

namespace deari {

enum class BaselineMethod { mean, locf, linear };

BaselineMethod parse_baseline(const std::string& name);

/// Reference imputers over the training mask. `mean` fills with the
/// per-feature observed mean of the whole batch; `locf` carries the last
/// observation forward (feature mean before the first observation); `linear`
/// interpolates between surrounding observations in timestamp space (nearest
/// observation beyond the ends). Observed cells pass through.
Array baseline_impute(const SeriesBatch& batch, BaselineMethod method);

}  // namespace deari
