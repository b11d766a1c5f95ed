#pragma once

#include <map>
#include <string>

#include "deari/params.hpp"
#include "deari/rng.hpp"
#include "deari/stack.hpp"

namespace deari {

/// Stochastic-variant settings. Only the recurrent-cell weight families are
/// Gaussian; every other parameter stays deterministic.
struct BayesConfig {
  real prior_std = real(1);
  real rho_init = real(-5);  // softplus(-5) ~ 6.7e-3: near-deterministic start
  int64_t unfreeze_every = 100;
  int64_t open_window = 1;
  int64_t n_sim = 10;
};

/// Promote all rnn_w / rnn_u / rnn_b entries of a stack store to Gaussian
/// (mu, rho) pairs.
void make_recurrent_params_gaussian(ParamStore& store, real rho_init);

/// One standard-normal draw per stochastic parameter scalar, in deterministic
/// store order. `zero_noise` gives the frozen collapse (weights == mu).
using NoiseSet = std::map<std::string, Array>;
NoiseSet draw_noise(const ParamStore& store, uint64_t seed);
NoiseSet zero_noise(const ParamStore& store);

/// Reparameterized sampled weight: W = mu + softplus(rho) * xi, with xi held
/// constant so gradients flow to (mu, rho).
NodePtr sample_weight(ParamBinding& binding, const std::string& name, const Array& xi);

/// Cell binder that substitutes sampled recurrent weights; weights are drawn
/// once per forward pass (one xi per parameter), not per timestep.
CellBinder stochastic_binder(const NoiseSet& noise);

/// Sum over stochastic parameters of log Q(W|theta) - log P(W) at the sampled
/// weights (the Monte-Carlo KL term of the training objective).
NodePtr kl_monte_carlo(ParamBinding& binding, const NoiseSet& noise, real prior_std);

/// Closed-form KL(Q||P) for the diagonal Gaussian posterior against the
/// N(0, prior_std^2) prior; exposed for testing and reporting.
NodePtr kl_closed_form(ParamBinding& binding, real prior_std);
real kl_closed_form_value(const ParamStore& store, real prior_std);

/// loss = data_term + (log Q - log P) / n_batches (omitted entirely when
/// frozen).
NodePtr elbo_loss(const NodePtr& data_term, const NodePtr& kl_term, int64_t n_batches);

/// Freeze/unfreeze alternation: step counting starts at 1; the schedule opens
/// for `open_window` steps at every multiple of `unfreeze_every`.
struct FreezeSchedule {
  int64_t unfreeze_every = 100;
  int64_t open_window = 1;
  bool open_at(int64_t step) const {
    if (unfreeze_every <= 0) return true;
    return step % unfreeze_every < open_window;
  }
};

/// Per-cell Monte-Carlo summary over n_sim sampled forward passes.
struct UncertaintyBand {
  Array mean;   // [B,T,D]
  Array stdev;  // population std over simulations
  Array q05;
  Array q95;
};

/// Aggregate per-cell simulations into a band; order-insensitive.
UncertaintyBand summarize_simulations(const std::vector<Array>& sims);

}  // namespace deari
