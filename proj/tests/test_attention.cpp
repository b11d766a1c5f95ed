#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "deari/attention.hpp"
#include "deari/grad_check.hpp"

using namespace deari;

namespace {

std::vector<NodePtr> random_sequence(int64_t steps, int64_t batch, int64_t width, uint64_t seed) {
  Rng rng(seed);
  std::vector<NodePtr> seq;
  for (int64_t s = 0; s < steps; ++s) {
    Array a({batch, width});
    rng.fill_uniform(a, -1, 1);
    seq.push_back(constant(std::move(a)));
  }
  return seq;
}

}  // namespace

TEST_CASE("zero weights over a zero sequence stay finite and deterministic") {
  AttentionConfig config{4, 2, 2, 8};
  ParamStore store;
  Rng rng(3);
  init_attention_params(store, "a/", config, rng);
  store.for_each([](const std::string&, Param& p) { p.value.fill(0); });

  std::vector<NodePtr> seq = {constant(Array({2, 4})), constant(Array({2, 4}))};
  auto run = [&]() {
    ParamBinding binding(store);
    AttentionWeights w = bind_attention_weights(binding, "a/", config);
    return attention_block(seq, w);
  };
  NodePtr out1 = run();
  NodePtr out2 = run();
  CHECK(out1->value.all_finite());
  for (int64_t i = 0; i < out1->value.numel(); ++i) CHECK(out1->value[i] == out2->value[i]);
}

TEST_CASE("attention probabilities over a single token sum to 1 per head") {
  AttentionConfig config{4, 1, 2, 8};
  ParamStore store;
  Rng rng(11);
  init_attention_params(store, "a/", config, rng);
  ParamBinding binding(store);
  AttentionWeights w = bind_attention_weights(binding, "a/", config);

  AttentionTrace trace;
  attention_block(random_sequence(1, 3, 4, 5), w, &trace);
  REQUIRE(trace.probs.size() == 2);  // one per head
  for (const NodePtr& probs : trace.probs) {
    REQUIRE(probs->value.shape() == Shape{3, 2, 2});  // CLS + token
    for (int64_t b = 0; b < 3; ++b) {
      for (int64_t r = 0; r < 2; ++r) {
        real s = 0;
        for (int64_t c = 0; c < 2; ++c) s += probs->value.at(b, r, c);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("block output is invariant to permuting the non-CLS tokens") {
  AttentionConfig config{6, 2, 3, 12};
  ParamStore store;
  Rng rng(17);
  init_attention_params(store, "a/", config, rng);
  ParamBinding binding(store);
  AttentionWeights w = bind_attention_weights(binding, "a/", config);

  std::vector<NodePtr> seq = random_sequence(5, 2, 6, 29);
  NodePtr base = attention_block(seq, w);

  std::vector<size_t> perm = {3, 0, 4, 2, 1};
  std::vector<NodePtr> shuffled;
  for (size_t i : perm) shuffled.push_back(seq[i]);
  NodePtr permuted = attention_block(shuffled, w);

  for (int64_t i = 0; i < base->value.numel(); ++i) {
    CHECK(base->value[i] == doctest::Approx(permuted->value[i]).epsilon(1e-10));
  }
}

TEST_CASE("attention block gradient matches finite differences") {
  AttentionConfig config{4, 1, 2, 6};
  ParamStore store;
  Rng rng(23);
  init_attention_params(store, "a/", config, rng);
  // biases at a generic point (relu kinks otherwise sit exactly at zero)
  store.for_each([&](const std::string& name, Param& p) {
    if (p.value.rank() == 1 && name.find("ln") == std::string::npos) {
      rng.fill_uniform(p.value, -0.2, 0.2);
    }
  });
  std::vector<NodePtr> seq = random_sequence(3, 2, 4, 31);
  auto report = grad_check(store, [&](ParamBinding& p) {
    AttentionWeights w = bind_attention_weights(p, "a/", config);
    return mean_all(square(attention_block(seq, w)));
  });
  CAPTURE(report.worst_param);
  CHECK(report.max_rel_err < 1e-3);
}
