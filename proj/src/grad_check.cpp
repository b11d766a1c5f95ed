#include "deari/grad_check.hpp"

#include <cmath>

namespace deari {

namespace {

real eval_loss(ParamStore& store, const std::function<NodePtr(ParamBinding&)>& build) {
  ParamBinding binding(store);
  NodePtr root = build(binding);
  if (root->value.numel() != 1) {
    throw std::invalid_argument("grad_check: loss must be scalar");
  }
  const real v = root->value[0];
  if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite loss evaluation");
  return v;
}

real central_diff(ParamStore& store, const std::function<NodePtr(ParamBinding&)>& build,
                  real& slot, real step) {
  const real saved = slot;
  slot = saved + step;
  const real up = eval_loss(store, build);
  slot = saved - step;
  const real down = eval_loss(store, build);
  slot = saved;
  return (up - down) / (2 * step);
}

}  // namespace

GradCheckReport grad_check(ParamStore& store, const std::function<NodePtr(ParamBinding&)>& build,
                           real fd_step, real denom_floor) {
  store.zero_grad();
  {
    ParamBinding binding(store);
    NodePtr root = build(binding);
    if (root->value.numel() != 1) {
      throw std::invalid_argument("grad_check: loss must be scalar");
    }
    if (!std::isfinite(root->value[0])) {
      throw std::runtime_error("grad_check: non-finite loss evaluation");
    }
    backward(root);
    binding.collect_grads();
  }

  GradCheckReport report;
  store.for_each([&](const std::string& name, Param& p) {
    GradCheckEntry entry{name, 0};
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      const real fd = central_diff(store, build, p.value[i], fd_step);
      const real ad = p.grad[i];
      const real rel = std::abs(ad - fd) / std::max(std::abs(ad) + std::abs(fd), denom_floor);
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    if (p.stochastic) {
      for (int64_t i = 0; i < p.rho.numel(); ++i) {
        const real fd = central_diff(store, build, p.rho[i], fd_step);
        const real ad = p.rho_grad[i];
        const real rel = std::abs(ad - fd) / std::max(std::abs(ad) + std::abs(fd), denom_floor);
        entry.max_rel_err = std::max(entry.max_rel_err, rel);
      }
    }
    if (entry.max_rel_err > report.max_rel_err) {
      report.max_rel_err = entry.max_rel_err;
      report.worst_param = name;
    }
    report.entries.push_back(std::move(entry));
  });
  return report;
}

}  // namespace deari
