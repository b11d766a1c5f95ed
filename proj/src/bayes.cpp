#include "deari/bayes.hpp"

#include <algorithm>
#include <cmath>

namespace deari {

namespace {

bool is_recurrent(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    const std::string s(suffix);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return ends_with("rnn_w") || ends_with("rnn_u") || ends_with("rnn_b");
}

}  // namespace

void make_recurrent_params_gaussian(ParamStore& store, real rho_init) {
  for (const std::string& name : store.names()) {
    if (is_recurrent(name)) store.make_gaussian(name, rho_init);
  }
}

NoiseSet draw_noise(const ParamStore& store, uint64_t seed) {
  NoiseSet noise;
  uint64_t stream = 0;
  for (const std::string& name : store.names()) {
    const Param& p = store.at(name);
    ++stream;
    if (!p.stochastic) continue;
    Array xi(p.value.shape());
    Rng rng(derive_seed(seed, stream));
    rng.fill_normal(xi);
    noise[name] = std::move(xi);
  }
  return noise;
}

NoiseSet zero_noise(const ParamStore& store) {
  NoiseSet noise;
  for (const std::string& name : store.names()) {
    const Param& p = store.at(name);
    if (p.stochastic) noise[name] = Array(p.value.shape());
  }
  return noise;
}

NodePtr sample_weight(ParamBinding& binding, const std::string& name, const Array& xi) {
  NodePtr mu = binding[name];
  NodePtr sigma = softplus(binding.rho(name));
  return add(mu, mul(sigma, constant(xi)));
}

CellBinder stochastic_binder(const NoiseSet& noise) {
  return [&noise](ParamBinding& binding, const std::string& prefix,
                  const CellConfig& config) -> CellWeights {
    CellWeights w = bind_cell_weights(binding, prefix, config);
    w.rnn_w = sample_weight(binding, prefix + "rnn_w", noise.at(prefix + "rnn_w"));
    w.rnn_u = sample_weight(binding, prefix + "rnn_u", noise.at(prefix + "rnn_u"));
    w.rnn_b = sample_weight(binding, prefix + "rnn_b", noise.at(prefix + "rnn_b"));
    return w;
  };
}

NodePtr kl_monte_carlo(ParamBinding& binding, const NoiseSet& noise, real prior_std) {
  // log Q - log P at W = mu + sigma*xi; the 0.5*log(2*pi) terms cancel.
  const real inv_prior_var = real(1) / (prior_std * prior_std);
  const real log_prior_std = std::log(prior_std);
  NodePtr total;
  for (const auto& [name, xi] : noise) {
    NodePtr mu = binding[name];
    NodePtr sigma = softplus(binding.rho(name));
    NodePtr w = add(mu, mul(sigma, constant(xi)));
    NodePtr diff = sub(w, mu);
    NodePtr inv_var = exp_op(scale(log_op(sigma), -2));
    NodePtr log_q = sub(scale(mul(square(diff), inv_var), real(-0.5)), log_op(sigma));
    NodePtr log_p = shift(scale(square(w), real(-0.5) * inv_prior_var), -log_prior_std);
    NodePtr term = sum_all(sub(log_q, log_p));
    total = total ? add(total, term) : term;
  }
  if (!total) total = constant(Array::scalar(0));
  return total;
}

NodePtr kl_closed_form(ParamBinding& binding, real prior_std) {
  const real inv_prior_var = real(1) / (prior_std * prior_std);
  const real log_prior_std = std::log(prior_std);
  NodePtr total;
  for (const std::string& name : binding.store().names()) {
    if (!binding.store().at(name).stochastic) continue;
    NodePtr mu = binding[name];
    NodePtr sigma = softplus(binding.rho(name));
    NodePtr var_plus_mu2 = add(square(sigma), square(mu));
    NodePtr term = sum_all(shift(
        sub(scale(var_plus_mu2, real(0.5) * inv_prior_var), log_op(sigma)),
        log_prior_std - real(0.5)));
    total = total ? add(total, term) : term;
  }
  if (!total) total = constant(Array::scalar(0));
  return total;
}

real kl_closed_form_value(const ParamStore& store, real prior_std) {
  ParamStore& mutable_store = const_cast<ParamStore&>(store);
  ParamBinding binding(mutable_store);
  return kl_closed_form(binding, prior_std)->value[0];
}

NodePtr elbo_loss(const NodePtr& data_term, const NodePtr& kl_term, int64_t n_batches) {
  if (n_batches < 1) throw std::invalid_argument("elbo_loss: n_batches must be >= 1");
  return add(data_term, scale(kl_term, real(1) / static_cast<real>(n_batches)));
}

UncertaintyBand summarize_simulations(const std::vector<Array>& sims) {
  if (sims.empty()) throw std::invalid_argument("summarize_simulations: no simulations");
  const int64_t n = static_cast<int64_t>(sims.size());
  const Shape shape = sims[0].shape();
  for (const Array& s : sims) {
    if (s.shape() != shape) throw std::invalid_argument("summarize_simulations: ragged shapes");
  }
  UncertaintyBand band;
  band.mean = Array(shape);
  band.stdev = Array(shape);
  band.q05 = Array(shape);
  band.q95 = Array(shape);
  std::vector<real> cell(static_cast<size_t>(n));
  const int64_t numel = sims[0].numel();
  for (int64_t i = 0; i < numel; ++i) {
    real sum = 0;
    real lo = sims[0][i], hi = sims[0][i];
    for (int64_t s = 0; s < n; ++s) {
      cell[static_cast<size_t>(s)] = sims[static_cast<size_t>(s)][i];
      sum += cell[static_cast<size_t>(s)];
      lo = std::min(lo, cell[static_cast<size_t>(s)]);
      hi = std::max(hi, cell[static_cast<size_t>(s)]);
    }
    if (lo == hi) {
      // all simulations agree (observed passthrough cells): width exactly 0
      band.mean[i] = lo;
      band.stdev[i] = 0;
      band.q05[i] = lo;
      band.q95[i] = lo;
      continue;
    }
    const real mean = sum / static_cast<real>(n);
    real sq = 0;
    for (int64_t s = 0; s < n; ++s) {
      const real d = cell[static_cast<size_t>(s)] - mean;
      sq += d * d;
    }
    band.mean[i] = mean;
    band.stdev[i] = std::sqrt(sq / static_cast<real>(n));
    std::sort(cell.begin(), cell.end());
    auto quantile = [&](real q) {
      const real pos = q * static_cast<real>(n - 1);
      const int64_t lo = static_cast<int64_t>(std::floor(pos));
      const int64_t hi = std::min(lo + 1, n - 1);
      const real frac = pos - static_cast<real>(lo);
      return cell[static_cast<size_t>(lo)] * (1 - frac) + cell[static_cast<size_t>(hi)] * frac;
    };
    band.q05[i] = quantile(real(0.05));
    band.q95[i] = quantile(real(0.95));
  }
  return band;
}

}  // namespace deari
