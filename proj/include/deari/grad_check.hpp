#pragma once

#include <functional>
#include <string>
#include <vector>

#include "deari/params.hpp"

namespace deari {

struct GradCheckEntry {
  std::string name;
  real max_rel_err = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  real max_rel_err = 0;
  std::string worst_param;
};

/// Compares reverse-mode gradients of a scalar loss against central finite
/// differences, per parameter scalar (values and rho for Gaussian entries).
/// `build` must construct the loss graph from scratch through the given
/// binding; it is re-invoked 2x per parameter scalar with perturbed values.
/// Relative error uses |ad - fd| / max(|ad| + |fd|, denom_floor).
/// Throws if any evaluation is non-finite.
GradCheckReport grad_check(ParamStore& store,
                           const std::function<NodePtr(ParamBinding&)>& build,
                           real fd_step = real(1e-5), real denom_floor = real(1e-4));

}  // namespace deari
