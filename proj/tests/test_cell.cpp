#include <doctest.h>

#include <cmath>

#include "deari/cell.hpp"
#include "deari/grad_check.hpp"

using namespace deari;

namespace {

SeriesBatch random_batch(int64_t b, int64_t t, int64_t d, uint64_t seed, real missing = 0.35) {
  Rng rng(seed);
  Array raw({b, t, d});
  Array ts({b, t});
  for (int64_t bi = 0; bi < b; ++bi) {
    real acc = 0;
    for (int64_t ti = 0; ti < t; ++ti) {
      acc += rng.uniform(0.5, 2.0);
      ts.at(bi, ti) = acc;
      for (int64_t di = 0; di < d; ++di) {
        raw.at(bi, ti, di) = rng.uniform(0, 1) < missing
                                 ? std::numeric_limits<real>::quiet_NaN()
                                 : rng.uniform(-1.5, 1.5);
      }
    }
  }
  return make_batch(raw, ts);
}

ParamStore make_store(const CellConfig& config, uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  init_cell_params(store, "fwd/", config, rng);
  init_cell_params(store, "bwd/", config, rng);
  return store;
}

// Finite differences misread relu exactly at its kink; delta[0]=0 with
// zero-initialized decay biases lands there deterministically. Checks run at
// a generic point instead.
void randomize_biases(ParamStore& store, uint64_t seed) {
  Rng rng(seed);
  store.for_each([&](const std::string&, Param& p) {
    if (p.value.rank() == 1) rng.fill_uniform(p.value, -0.3, 0.3);
  });
}

NodePtr bi_loss(ParamBinding& p, const SeriesBatch& batch, const CellConfig& config) {
  CellWeights wf = bind_cell_weights(p, "fwd/", config);
  CellWeights wb = bind_cell_weights(p, "bwd/", config);
  NodePtr h0f = zero_state(batch.samples(), config.hidden_dim);
  NodePtr h0b = zero_state(batch.samples(), config.hidden_dim);
  return run_bidirectional(batch, wf, wb, h0f, h0b, real(0.1)).loss;
}

}  // namespace

TEST_CASE("temporal decay") {
  SUBCASE("zero weights give gamma = 1") {
    NodePtr delta = constant(Array({2, 3}, real(7)));
    NodePtr g = temporal_decay(delta, constant(Array({3, 4})), constant(Array({4})));
    for (int64_t i = 0; i < g->value.numel(); ++i) CHECK(g->value[i] == 1.0);
  }
  SUBCASE("pre-activation ln 2 gives gamma = 0.5") {
    NodePtr delta = constant(Array({1, 1}, {std::log(2.0)}));
    NodePtr g = temporal_decay(delta, constant(Array({1, 1}, {1.0})), constant(Array({1})));
    CHECK(g->value[0] == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("matches the scalar reference on random inputs") {
    Rng rng(31);
    Array delta({4, 3});
    Array w({3, 5});
    Array b({5});
    rng.fill_uniform(delta, 0, 4);
    rng.fill_uniform(w, -1, 1);
    rng.fill_uniform(b, -1, 1);
    NodePtr g = temporal_decay(constant(delta), constant(w), constant(b));
    for (int64_t r = 0; r < 4; ++r) {
      for (int64_t j = 0; j < 5; ++j) {
        real pre = b[j];
        for (int64_t k = 0; k < 3; ++k) pre += delta.at(r, k) * w.at(k, j);
        const real expect = std::exp(-std::max(real(0), pre));
        CHECK(g->value.at(r, j) == doctest::Approx(expect).epsilon(1e-12));
        CHECK(g->value.at(r, j) > 0);
        CHECK(g->value.at(r, j) <= 1);
      }
    }
  }
}

TEST_CASE("cell step essentials") {
  CellConfig config{2, 4, CellType::gru};
  ParamStore store = make_store(config, 5);
  SeriesBatch batch = random_batch(3, 1, 2, 17, /*missing=*/0);

  SUBCASE("fully observed step passes the observation through") {
    ParamBinding p(store);
    CellWeights w = bind_cell_weights(p, "fwd/", config);
    NodePtr x = constant(Array({3, 2}, {1, -2, 3, -4, 5, -6}));
    NodePtr m = constant(Array({3, 2}, real(1)));
    NodePtr dt = constant(Array({3, 2}, real(0.5)));
    StepNodes s = cell_step(x, m, dt, zero_state(3, 4), zero_state(3, 4), w);
    for (int64_t i = 0; i < 6; ++i) {
      CHECK(s.x_hist_cmp->value[i] == x->value[i]);
      CHECK(s.imputation->value[i] == x->value[i]);
    }
  }

  SUBCASE("saturated gate selects the feature-wise estimate") {
    store.at("fwd/gate_b").value.fill(40);  // sigmoid(~40) == 1 at double precision
    ParamBinding p(store);
    CellWeights w = bind_cell_weights(p, "fwd/", config);
    NodePtr x = constant(Array({1, 2}, {0.3, 0.9}));
    NodePtr m = constant(Array({1, 2}, {0, 0}));
    NodePtr dt = constant(Array({1, 2}, {1, 1}));
    StepNodes s = cell_step(x, m, dt, zero_state(1, 4), zero_state(1, 4), w);
    for (int64_t i = 0; i < 2; ++i) {
      CHECK(s.gate->value[i] == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(s.x_comb->value[i] == doctest::Approx(s.x_feat->value[i]).epsilon(1e-9));
    }
  }

  SUBCASE("gate and decay ranges") {
    ParamBinding p(store);
    CellWeights w = bind_cell_weights(p, "fwd/", config);
    NodePtr x = constant(Array({3, 2}, real(0.7)));
    NodePtr m = constant(Array({3, 2}, {1, 0, 0, 1, 1, 1}));
    NodePtr dt = constant(Array({3, 2}, real(2)));
    StepNodes s = cell_step(x, m, dt, zero_state(3, 4), zero_state(3, 4), w);
    for (int64_t i = 0; i < s.decay_h->value.numel(); ++i) {
      CHECK(s.decay_h->value[i] > 0);
      CHECK(s.decay_h->value[i] <= 1);
    }
    for (int64_t i = 0; i < s.gate->value.numel(); ++i) {
      CHECK(s.gate->value[i] > 0);
      CHECK(s.gate->value[i] < 1);
    }
  }
}

TEST_CASE("feature regression has a structural zero diagonal") {
  CellConfig config{2, 4, CellType::gru};
  ParamStore store = make_store(config, 6);

  SUBCASE("swap matrix maps [3,4] to [4,3]") {
    Param& fw = store.at("fwd/feat_w");
    fw.value.at(0, 0) = 0;
    fw.value.at(0, 1) = 1;
    fw.value.at(1, 0) = 1;
    fw.value.at(1, 1) = 0;
    store.at("fwd/feat_b").value.fill(0);
    ParamBinding p(store);
    CellWeights w = bind_cell_weights(p, "fwd/", config);
    NodePtr in = constant(Array({1, 2}, {3, 4}));
    NodePtr out = add(matmul(in, w.feat_w), w.feat_b);
    CHECK(out->value[0] == 4);
    CHECK(out->value[1] == 3);
  }

  SUBCASE("diagonal of the bound weight is zero even when the raw value is not") {
    store.at("fwd/feat_w").value.fill(0.7);
    ParamBinding p(store);
    CellWeights w = bind_cell_weights(p, "fwd/", config);
    CHECK(w.feat_w->value.at(0, 0) == 0);
    CHECK(w.feat_w->value.at(1, 1) == 0);
    CHECK(w.feat_w->value.at(0, 1) == doctest::Approx(0.7));
  }

  SUBCASE("autodiff confirms d x_feat[d] / d x_input[d] == 0") {
    ParamBinding p(store);
    CellWeights w = bind_cell_weights(p, "fwd/", config);
    for (int64_t d = 0; d < 2; ++d) {
      NodePtr in = leaf(Array({1, 2}, {0.4, -0.9}));
      NodePtr out = add(matmul(in, w.feat_w), w.feat_b);
      Array pick({1, 2});
      pick.at(0, d) = 1;
      backward(sum_all(mul(out, constant(pick))));
      CHECK(in->grad.at(0, d) == 0);
    }
  }
}

TEST_CASE("run_direction on a single step equals one cell_step") {
  CellConfig config{2, 3, CellType::gru};
  ParamStore store = make_store(config, 8);
  SeriesBatch batch = random_batch(2, 1, 2, 21);
  ParamBinding p(store);
  CellWeights w = bind_cell_weights(p, "fwd/", config);
  DirectionResult r = run_direction(batch, w, Direction::forward, zero_state(2, 3), zero_state(2, 3));
  CHECK(r.imputations.size() == 1);
  CHECK(r.hiddens.size() == 2);

  NodePtr x = constant(Array({2, 2}, {batch.values.at(0, 0, 0), batch.values.at(0, 0, 1),
                                      batch.values.at(1, 0, 0), batch.values.at(1, 0, 1)}));
  NodePtr m = constant(Array({2, 2}, {batch.mask.at(0, 0, 0), batch.mask.at(0, 0, 1),
                                      batch.mask.at(1, 0, 0), batch.mask.at(1, 0, 1)}));
  NodePtr dt = constant(Array({2, 2}, {0, 0, 0, 0}));
  StepNodes s = cell_step(x, m, dt, zero_state(2, 3), zero_state(2, 3), w);
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(r.imputations[0]->value[i] == s.imputation->value[i]);
  }
}

TEST_CASE("hand-unrolled loss on the all-zero-parameter cell") {
  // D=1, H=1, T=2, one observed cell x=0.5 at step 0: the history estimate
  // is 0 (error .5), the feature estimate is 0 (error .5), the gate sits at
  // sigmoid(0)=0.5 so the combined estimate is 0.25 (error .25).
  CellConfig config{1, 1, CellType::gru};
  ParamStore store;
  Rng rng(1);
  init_cell_params(store, "fwd/", config, rng);
  init_cell_params(store, "bwd/", config, rng);
  store.for_each([](const std::string&, Param& p) { p.value.fill(0); });

  Array raw({1, 2, 1}, {0.5, std::numeric_limits<real>::quiet_NaN()});
  Array ts({1, 2}, {0, 1});
  SeriesBatch batch = make_batch(raw, ts);

  ParamBinding p(store);
  CellWeights wf = bind_cell_weights(p, "fwd/", config);
  CellWeights wb = bind_cell_weights(p, "bwd/", config);
  BiResult r = run_bidirectional(batch, wf, wb, zero_state(1, 1), zero_state(1, 1), 0.1);
  CHECK(r.fwd.recon_loss->value[0] == doctest::Approx(1.25).epsilon(1e-12));
  CHECK(r.bwd.recon_loss->value[0] == doctest::Approx(1.25).epsilon(1e-12));
  CHECK(r.consistency->value[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.loss->value[0] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("zero observed cells give zero loss with a warning") {
  CellConfig config{2, 3, CellType::gru};
  ParamStore store = make_store(config, 12);
  SeriesBatch batch = random_batch(2, 3, 2, 77, /*missing=*/1.1);  // everything missing
  REQUIRE(batch.observed_count() == 0);
  ParamBinding p(store);
  CellWeights w = bind_cell_weights(p, "fwd/", config);
  DirectionResult r = run_direction(batch, w, Direction::forward, zero_state(2, 3), zero_state(2, 3));
  CHECK(r.recon_loss->value[0] == 0);
}

TEST_CASE("combine_bidirectional") {
  NodePtr a = constant(Array({2, 2}, {1, 2, 3, 4}));
  NodePtr b = constant(Array({2, 2}, {5, 6, 7, 8}));
  SUBCASE("equal inputs return either") {
    auto c = combine_bidirectional({a}, {a});
    for (int64_t i = 0; i < 4; ++i) CHECK(c[0]->value[i] == a->value[i]);
  }
  SUBCASE("zero and 2x average to x") {
    NodePtr zero = constant(Array({2, 2}));
    NodePtr twice = scale(a, 2);
    auto c = combine_bidirectional({zero}, {twice});
    for (int64_t i = 0; i < 4; ++i) CHECK(c[0]->value[i] == doctest::Approx(a->value[i]).epsilon(1e-14));
  }
  SUBCASE("random pair matches the scalar mean") {
    auto c = combine_bidirectional({a}, {b});
    for (int64_t i = 0; i < 4; ++i) {
      CHECK(c[0]->value[i] == doctest::Approx((a->value[i] + b->value[i]) / 2).epsilon(1e-14));
    }
  }
}

TEST_CASE("palindromic batch gives identical forward and backward losses") {
  // gaps [1,2,1] and values/masks symmetric in time, so the reversed series
  // equals the original and the shared-parameter directions must agree.
  CellConfig config{2, 4, CellType::gru};
  ParamStore store = make_store(config, 23);
  Array raw({1, 4, 2});
  const real nan = std::numeric_limits<real>::quiet_NaN();
  raw.at(0, 0, 0) = 0.7;
  raw.at(0, 1, 0) = nan;
  raw.at(0, 2, 0) = nan;
  raw.at(0, 3, 0) = 0.7;
  raw.at(0, 0, 1) = nan;
  raw.at(0, 1, 1) = -0.2;
  raw.at(0, 2, 1) = -0.2;
  raw.at(0, 3, 1) = nan;
  Array ts({1, 4}, {0, 1, 3, 4});
  SeriesBatch batch = make_batch(raw, ts);

  ParamBinding p(store);
  CellWeights w = bind_cell_weights(p, "fwd/", config);
  DirectionResult f = run_direction(batch, w, Direction::forward, zero_state(1, 4), zero_state(1, 4));
  DirectionResult b = run_direction(batch, w, Direction::backward, zero_state(1, 4), zero_state(1, 4));
  CHECK(f.recon_loss->value[0] == doctest::Approx(b.recon_loss->value[0]).epsilon(1e-14));
}

TEST_CASE("observed passthrough holds for any parameters") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    CellConfig config{3, 5, CellType::gru};
    ParamStore store = make_store(config, seed * 100);
    SeriesBatch batch = random_batch(2, 4, 3, seed);
    ParamBinding p(store);
    CellWeights wf = bind_cell_weights(p, "fwd/", config);
    CellWeights wb = bind_cell_weights(p, "bwd/", config);
    BiResult r = run_bidirectional(batch, wf, wb, zero_state(2, 5), zero_state(2, 5), 0.1);
    for (int64_t t = 0; t < 4; ++t) {
      for (int64_t bi = 0; bi < 2; ++bi) {
        for (int64_t d = 0; d < 3; ++d) {
          if (batch.mask.at(bi, t, d) == 1) {
            CHECK(r.c_star[static_cast<size_t>(t)]->value.at(bi, d) == batch.values.at(bi, t, d));
          }
        }
      }
    }
  }
}

TEST_CASE("bidirectional loss gradient matches finite differences (GRU and LSTM)") {
  for (CellType cell : {CellType::gru, CellType::lstm}) {
    CAPTURE(cell == CellType::gru ? "gru" : "lstm");
    CellConfig config{2, 4, cell};
    ParamStore store = make_store(config, 91);
    randomize_biases(store, 92);
    SeriesBatch batch = random_batch(2, 3, 2, 37);
    auto report = grad_check(store, [&](ParamBinding& p) { return bi_loss(p, batch, config); });
    CAPTURE(report.worst_param);
    CHECK(report.max_rel_err < 1e-3);
  }
}

TEST_CASE("training gradient is blind to held-out ground truth") {
  CellConfig config{2, 4, CellType::gru};
  ParamStore storeA = make_store(config, 55);
  ParamStore storeB = make_store(config, 55);

  // two raw datasets differing ONLY at cells that the eval mask will hide
  SeriesBatch a = random_batch(2, 4, 2, 71, 0.2);
  apply_eval_mask(a, 0.4, 9);
  SeriesBatch b = a;
  REQUIRE(b.eval_count() > 0);
  for (int64_t i = 0; i < b.eval_values.numel(); ++i) {
    if (b.eval_mask[i] != 0) b.eval_values[i] = 1e9;  // garbage ground truth
  }

  auto grads = [&](ParamStore& store, const SeriesBatch& batch) {
    store.zero_grad();
    ParamBinding p(store);
    NodePtr loss = bi_loss(p, batch, config);
    backward(loss);
    p.collect_grads();
    std::vector<real> out;
    store.for_each([&](const std::string&, Param& prm) {
      for (int64_t i = 0; i < prm.grad.numel(); ++i) out.push_back(prm.grad[i]);
    });
    return out;
  };
  CHECK(grads(storeA, a) == grads(storeB, b));
}
