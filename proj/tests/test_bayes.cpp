#include <doctest.h>

#include <cmath>

#include "deari/bayes.hpp"
#include "deari/grad_check.hpp"
#include "deari/model.hpp"
#include "deari/synth.hpp"

using namespace deari;

namespace {

RunConfig tiny_bayes_config() {
  RunConfig config;
  config.variant = "bayesian-deari";
  config.layers = 1;
  config.hidden = 4;
  config.heads = 2;
  config.encoder_depth = 1;
  config.ffn_width = 8;
  config.batch_size = 4;
  config.seed = 11;
  return config;
}

SeriesBatch tiny_batch(uint64_t seed, int64_t samples = 3) {
  SynthSpec spec;
  spec.samples = samples;
  spec.steps = 4;
  spec.features = 3;
  spec.latents = 2;
  spec.missing = real(0.3);
  return synth_generate(spec, seed);
}

}  // namespace

TEST_CASE("sampled weights") {
  ParamStore store;
  store.add("w", Array({2, 2}, real(1)));
  store.make_gaussian("w", real(-40));

  SUBCASE("vanishing std collapses to the mean") {
    NoiseSet noise = draw_noise(store, 3);
    ParamBinding binding(store);
    NodePtr w = sample_weight(binding, "w", noise.at("w"));
    for (int64_t i = 0; i < 4; ++i) CHECK(std::abs(w->value[i] - 1.0) < 1e-12);
  }
  SUBCASE("rho = 0 gives std = ln 2") {
    store.at("w").rho.fill(0);
    Array xi({2, 2}, real(1));
    ParamBinding binding(store);
    NodePtr w = sample_weight(binding, "w", xi);
    for (int64_t i = 0; i < 4; ++i) {
      CHECK(w->value[i] == doctest::Approx(1.0 + std::log(2.0)).epsilon(1e-12));
    }
  }
  SUBCASE("draw moments at mu=1, rho=0 over 1e5 samples") {
    ParamStore big;
    big.add("w", Array({100000}, real(1)));
    big.make_gaussian("w", real(0));
    NoiseSet noise = draw_noise(big, 77);
    ParamBinding binding(big);
    NodePtr w = sample_weight(binding, "w", noise.at("w"));
    const int64_t n = w->value.numel();
    real mean = 0;
    for (int64_t i = 0; i < n; ++i) mean += w->value[i];
    mean /= static_cast<real>(n);
    real var = 0;
    for (int64_t i = 0; i < n; ++i) {
      const real d = w->value[i] - mean;
      var += d * d;
    }
    const real stdev = std::sqrt(var / static_cast<real>(n));
    const real ln2 = std::log(2.0);
    CHECK(std::abs(mean - 1.0) <= 3 * ln2 / std::sqrt(static_cast<real>(n)));
    CHECK(std::abs(stdev - ln2) / ln2 < 0.02);
  }
}

TEST_CASE("KL terms") {
  SUBCASE("posterior equal to the prior gives exactly zero") {
    // softplus(0) = ln 2: make the prior std match
    const real prior = std::log(2.0);
    ParamStore store;
    store.add("w", Array({5}, real(0)));
    store.make_gaussian("w", real(0));
    CHECK(kl_closed_form_value(store, prior) == doctest::Approx(0.0).epsilon(1e-14));
    // pointwise log Q - log P is zero for every draw
    NoiseSet noise = draw_noise(store, 5);
    ParamBinding binding(store);
    NodePtr mc = kl_monte_carlo(binding, noise, prior);
    CHECK(mc->value[0] == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("closed form is non-negative on random parameters") {
    Rng rng(17);
    for (int trial = 0; trial < 30; ++trial) {
      ParamStore store;
      Array mu({7});
      Array rho({7});
      rng.fill_uniform(mu, -2, 2);
      rng.fill_uniform(rho, -4, 2);
      store.add_gaussian("w", mu, rho);
      CHECK(kl_closed_form_value(store, real(1)) >= 0);
    }
  }
  SUBCASE("Monte-Carlo estimate agrees with the closed form within 2%") {
    // one scalar posterior replicated 1e5 times: the per-entry average of
    // log Q - log P estimates the scalar KL
    const int64_t n = 100000;
    ParamStore store;
    store.add("w", Array({n}, real(0.5)));
    store.make_gaussian("w", real(-0.5));
    const real prior = real(1.3);
    const real closed = kl_closed_form_value(store, prior) / static_cast<real>(n);
    NoiseSet noise = draw_noise(store, 99);
    ParamBinding binding(store);
    const real mc = kl_monte_carlo(binding, noise, prior)->value[0] / static_cast<real>(n);
    CHECK(std::abs(mc - closed) / closed < 0.02);
  }
  SUBCASE("doubling n_batches halves the KL contribution") {
    ParamStore store;
    store.add("w", Array({3}, real(0.7)));
    store.make_gaussian("w", real(-1));
    ParamBinding binding(store);
    NodePtr kl = kl_closed_form(binding, 1);
    NodePtr data = constant(Array::scalar(0));
    const real l1 = elbo_loss(data, kl, 1)->value[0];
    const real l2 = elbo_loss(data, kl, 2)->value[0];
    CHECK(l1 == doctest::Approx(2 * l2).epsilon(1e-12));
  }
  SUBCASE("reparameterization gradients pass finite differences with fixed noise") {
    ParamStore store;
    Rng rng(23);
    Array mu({3, 2});
    rng.fill_uniform(mu, -1, 1);
    store.add("w", mu);
    store.make_gaussian("w", real(-1));
    rng.fill_uniform(store.at("w").rho, -2, 0);
    NoiseSet noise = draw_noise(store, 41);
    Array probe({2, 3});
    rng.fill_uniform(probe, -1, 1);
    auto report = grad_check(store, [&](ParamBinding& p) {
      NodePtr w = sample_weight(p, "w", noise.at("w"));
      NodePtr data = mean_all(square(matmul(constant(probe), w)));
      return elbo_loss(data, kl_monte_carlo(p, noise, real(1)), 4);
    });
    CAPTURE(report.worst_param);
    CHECK(report.max_rel_err < 1e-3);
  }
}

TEST_CASE("freeze schedule") {
  FreezeSchedule schedule{100, 1};
  CHECK(schedule.open_at(100));
  CHECK(schedule.open_at(200));
  for (int64_t step = 1; step < 100; ++step) CHECK(!schedule.open_at(step));
  CHECK(!schedule.open_at(101));

  FreezeSchedule always{1, 1};
  for (int64_t step = 1; step <= 5; ++step) CHECK(always.open_at(step));

  FreezeSchedule window{10, 3};
  CHECK(window.open_at(10));
  CHECK(window.open_at(11));
  CHECK(window.open_at(12));
  CHECK(!window.open_at(13));
}

TEST_CASE("only recurrent-cell parameters become stochastic") {
  Model model(tiny_bayes_config(), 3);
  model.params().for_each([](const std::string& name, Param& p) {
    const bool recurrent = name.find("rnn_") != std::string::npos;
    CHECK(p.stochastic == recurrent);
  });
}

TEST_CASE("frozen mode is bit-identical to the deterministic model") {
  RunConfig bayes_config = tiny_bayes_config();
  RunConfig det_config = bayes_config;
  det_config.variant = "deari";
  Model bayes(bayes_config, 3);
  Model det(det_config, 3);
  // identical construction seed: the mean parameters coincide
  SeriesBatch batch = tiny_batch(7);

  ParamBinding pb(bayes.params());
  ForwardResult fb = bayes.forward(batch, pb, {});  // frozen: no sampling requested
  ParamBinding pd(det.params());
  ForwardResult fd = det.forward(batch, pd, {});
  CHECK(fb.total_loss->value[0] == fd.total_loss->value[0]);
  CHECK(fb.kl_term == nullptr);
}

TEST_CASE("sampling is seed-deterministic and seed-sensitive") {
  Model model(tiny_bayes_config(), 3);
  // widen the posteriors so different noise is visible in the outputs
  model.params().for_each([](const std::string&, Param& p) {
    if (p.stochastic) p.rho.fill(real(0));
  });
  SeriesBatch batch = tiny_batch(9);

  auto run = [&](uint64_t noise_seed) {
    ParamBinding binding(model.params());
    ForwardOptions options;
    options.sample = true;
    options.noise_seed = noise_seed;
    return model.forward(batch, binding, options).total_loss->value[0];
  };
  CHECK(run(5) == run(5));
  CHECK(run(5) != run(6));
}

TEST_CASE("uncertainty bands") {
  SUBCASE("zero-std posteriors collapse the band everywhere") {
    Model model(tiny_bayes_config(), 3);
    model.params().for_each([](const std::string&, Param& p) {
      if (p.stochastic) p.rho.fill(real(-40));
    });
    SeriesBatch batch = tiny_batch(13);
    UncertaintyBand band = model.predict_with_uncertainty(batch, 5, 3);
    for (int64_t i = 0; i < band.stdev.numel(); ++i) {
      CHECK(band.stdev[i] <= 1e-12);
      CHECK(band.q95[i] - band.q05[i] <= 1e-12);
    }
  }
  SUBCASE("a single simulation gives a degenerate band at that simulation") {
    Model model(tiny_bayes_config(), 3);
    SeriesBatch batch = tiny_batch(15);
    UncertaintyBand band = model.predict_with_uncertainty(batch, 1, 4);
    for (int64_t i = 0; i < band.stdev.numel(); ++i) {
      CHECK(band.stdev[i] == 0);
      CHECK(band.q05[i] == band.mean[i]);
      CHECK(band.q95[i] == band.mean[i]);
    }
  }
  SUBCASE("observed cells always have zero band width") {
    Model model(tiny_bayes_config(), 3);
    model.params().for_each([](const std::string&, Param& p) {
      if (p.stochastic) p.rho.fill(real(0));  // wide posterior
    });
    SeriesBatch batch = tiny_batch(17);
    UncertaintyBand band = model.predict_with_uncertainty(batch, 6, 5);
    bool any_missing_width = false;
    for (int64_t b = 0; b < batch.samples(); ++b) {
      for (int64_t t = 0; t < batch.steps(); ++t) {
        for (int64_t d = 0; d < batch.features(); ++d) {
          if (batch.mask.at(b, t, d) != 0) {
            CHECK(band.stdev.at(b, t, d) == 0);
          } else {
            any_missing_width = any_missing_width || band.stdev.at(b, t, d) > 0;
          }
        }
      }
    }
    CHECK(any_missing_width);
  }
  SUBCASE("10 simulations stay inside the 200-simulation reference envelope") {
    Model model(tiny_bayes_config(), 3);
    model.params().for_each([](const std::string&, Param& p) {
      if (p.stochastic) p.rho.fill(real(-2));
    });
    SeriesBatch batch = tiny_batch(19, 2);
    UncertaintyBand coarse = model.predict_with_uncertainty(batch, 10, 21);
    UncertaintyBand reference = model.predict_with_uncertainty(batch, 200, 22);
    for (int64_t i = 0; i < coarse.mean.numel(); ++i) {
      const real envelope = 3 * reference.stdev[i] / std::sqrt(real(10)) + 1e-9;
      CHECK(std::abs(coarse.mean[i] - reference.mean[i]) <= envelope);
    }
  }
  SUBCASE("order-insensitive aggregation") {
    Rng rng(33);
    std::vector<Array> sims;
    for (int s = 0; s < 7; ++s) {
      Array a({2, 3, 2});
      rng.fill_uniform(a, -1, 1);
      sims.push_back(std::move(a));
    }
    UncertaintyBand fwd = summarize_simulations(sims);
    std::vector<Array> reversed(sims.rbegin(), sims.rend());
    UncertaintyBand rev = summarize_simulations(reversed);
    for (int64_t i = 0; i < fwd.mean.numel(); ++i) {
      CHECK(fwd.q05[i] == rev.q05[i]);
      CHECK(fwd.q95[i] == rev.q95[i]);
      CHECK(fwd.mean[i] == doctest::Approx(rev.mean[i]).epsilon(1e-12));
    }
  }
}
