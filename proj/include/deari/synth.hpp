#pragma once

#include "deari/series.hpp"

namespace deari {

/// Synthetic dataset recipe: shared latent sinusoids with autoregressive
/// noise, linearly mixed across features (so cross-feature regression has
/// signal), MCAR native missingness, irregular sampling.
struct SynthSpec {
  int64_t samples = 512;
  int64_t steps = 36;
  int64_t features = 8;
  int64_t latents = 3;
  real noise = real(0.05);       // observation noise scale
  real ar_coeff = real(0.8);     // latent AR(1) coefficient
  real missing = real(0.2);      // native MCAR missingness rate
  real gap_jitter = real(0.5);   // gaps drawn from U(1-jitter, 1+jitter)
};

/// Deterministic under (spec, seed); two runs with the same seed produce
/// identical batches.
SeriesBatch synth_generate(const SynthSpec& spec, uint64_t seed);

}  // namespace deari
