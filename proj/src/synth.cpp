#include "deari/synth.hpp"

#include <cmath>
#include <limits>

#include "deari/rng.hpp"

namespace deari {

SeriesBatch synth_generate(const SynthSpec& spec, uint64_t seed) {
  if (spec.samples < 1 || spec.steps < 1 || spec.features < 1 || spec.latents < 1) {
    throw std::invalid_argument("synth_generate: extents must be positive");
  }
  if (spec.missing < 0 || spec.missing >= 1) {
    throw std::invalid_argument("synth_generate: missing rate must be in [0,1)");
  }
  const int64_t b = spec.samples, t = spec.steps, d = spec.features, k = spec.latents;

  // fixed cross-feature mixing for the whole dataset
  Rng mix_rng(derive_seed(seed, 0x6d6978ull));
  Array mixing({d, k});
  mix_rng.fill_uniform(mixing, -1, 1);

  Rng rng(derive_seed(seed, 0x73796e7468ull));
  Array raw({b, t, d});
  Array stamps({b, t});
  std::vector<real> phase(static_cast<size_t>(k)), freq(static_cast<size_t>(k)),
      ar(static_cast<size_t>(k));
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t ki = 0; ki < k; ++ki) {
      phase[static_cast<size_t>(ki)] = rng.uniform(0, real(6.283185307179586));
      freq[static_cast<size_t>(ki)] = rng.uniform(real(0.15), real(0.6));
      ar[static_cast<size_t>(ki)] = 0;
    }
    real ts = 0;
    for (int64_t ti = 0; ti < t; ++ti) {
      ts += rng.uniform(1 - spec.gap_jitter, 1 + spec.gap_jitter);
      stamps.at(bi, ti) = ts;
      for (int64_t ki = 0; ki < k; ++ki) {
        ar[static_cast<size_t>(ki)] = spec.ar_coeff * ar[static_cast<size_t>(ki)] +
                                      spec.noise * rng.normal();
      }
      for (int64_t di = 0; di < d; ++di) {
        real v = 0;
        for (int64_t ki = 0; ki < k; ++ki) {
          const real latent = std::sin(freq[static_cast<size_t>(ki)] * ts +
                                       phase[static_cast<size_t>(ki)]) +
                              ar[static_cast<size_t>(ki)];
          v += mixing.at(di, ki) * latent;
        }
        v += spec.noise * rng.normal();
        raw.at(bi, ti, di) = v;
      }
    }
    // native MCAR missingness, drawn after the values so the signal itself
    // is independent of the mask
    for (int64_t ti = 0; ti < t; ++ti) {
      for (int64_t di = 0; di < d; ++di) {
        if (rng.uniform(0, 1) < spec.missing) {
          raw.at(bi, ti, di) = std::numeric_limits<real>::quiet_NaN();
        }
      }
    }
  }
  return make_batch(raw, stamps);
}

}  // namespace deari
