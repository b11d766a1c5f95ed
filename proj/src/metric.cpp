#include "deari/metric.hpp"

#include <cmath>

namespace deari {

RepStrategy parse_strategy(const std::string& name) {
  if (name == "cls") return RepStrategy::cls;
  if (name == "last") return RepStrategy::last;
  if (name == "mean") return RepStrategy::mean;
  throw std::invalid_argument("unknown representation strategy: '" + name +
                              "' (expected cls|last|mean)");
}

std::string strategy_name(RepStrategy s) {
  switch (s) {
    case RepStrategy::cls: return "cls";
    case RepStrategy::last: return "last";
    case RepStrategy::mean: return "mean";
  }
  return "?";
}

NodePtr extract_representation(const std::vector<NodePtr>& hidden_seq, RepStrategy strategy,
                               const AttentionWeights* attn, AttentionTrace* trace) {
  if (hidden_seq.empty()) throw ShapeError("extract_representation", "empty hidden sequence");
  const int64_t seq = static_cast<int64_t>(hidden_seq.size());
  NodePtr reduced;
  if (attn != nullptr) {
    const int64_t batch = hidden_seq[0]->value.dim(0);
    NodePtr tokens = concat_axis1(repeat_rows(attn->cls, batch), stack_axis1(hidden_seq));
    NodePtr encoded = encoder_forward(tokens, *attn, trace);
    switch (strategy) {
      case RepStrategy::cls: reduced = mean_axis1(slice_axis1(encoded, 0, 1)); break;
      case RepStrategy::last: reduced = mean_axis1(slice_axis1(encoded, seq, 1)); break;
      case RepStrategy::mean: reduced = mean_axis1(slice_axis1(encoded, 1, seq)); break;
    }
  } else {
    // bypass mode: reduce the raw hidden sequence
    switch (strategy) {
      case RepStrategy::cls:
        throw std::invalid_argument("CLS strategy requires the attention encoder");
      case RepStrategy::last: reduced = hidden_seq.back(); break;
      case RepStrategy::mean: reduced = mean_axis1(stack_axis1(hidden_seq)); break;
    }
  }
  return l2_normalize_rows(reduced);
}

NodePtr squeeze_layers(const std::vector<NodePtr>& per_layer_reps) {
  if (per_layer_reps.empty()) throw ShapeError("squeeze_layers", "no layers");
  if (per_layer_reps.size() == 1) return per_layer_reps[0];
  NodePtr sum = per_layer_reps[0];
  for (size_t l = 1; l < per_layer_reps.size(); ++l) sum = add(sum, per_layer_reps[l]);
  return l2_normalize_rows(scale(sum, real(1) / static_cast<real>(per_layer_reps.size())));
}

namespace {

real row_distance(const Array& reps, int64_t a, int64_t b) {
  const int64_t h = reps.dim(1);
  real sq = 0;
  for (int64_t j = 0; j < h; ++j) {
    const real d = reps.at(a, j) - reps.at(b, j);
    sq += d * d;
  }
  return std::sqrt(sq);
}

}  // namespace

TripletSet mine_triplets(const Array& reps, real margin) {
  if (reps.rank() != 2 || reps.dim(0) % 2 != 0) {
    throw ShapeError("mine_triplets", "expected [2N,H] rows, got " + reps.shape_string());
  }
  TripletSet set;
  set.margin = margin;
  set.rows = reps.dim(0);
  const int64_t n = reps.dim(0) / 2;
  if (n < 2) return set;
  for (int64_t row = 0; row < 2 * n; ++row) {
    const int64_t sample = row % n;
    const int64_t positive = (row + n) % (2 * n);
    const real d_ap = row_distance(reps, row, positive);
    for (int64_t neg = 0; neg < 2 * n; ++neg) {
      if (neg % n == sample) continue;  // same sample (either direction)
      const real d_an = row_distance(reps, row, neg);
      if (d_ap + margin >= d_an) set.triplets.push_back({row, positive, neg});
    }
  }
  return set;
}

PairSets pair_sets(const TripletSet& set) {
  PairSets pairs;
  pairs.positive = Array({set.rows, set.rows});
  pairs.negative = Array({set.rows, set.rows});
  for (const Triplet& t : set.triplets) {
    pairs.positive.at(t.anchor, t.positive) = 1;
    pairs.negative.at(t.anchor, t.negative) = 1;
  }
  return pairs;
}

NodePtr ms_loss(const NodePtr& reps, const PairSets& pairs, const DmlConfig& config) {
  if (config.alpha <= 0 || config.beta <= 0) {
    throw std::invalid_argument("ms_loss: alpha and beta must be positive");
  }
  const int64_t rows = reps->value.dim(0);
  if (pairs.positive.rank() != 2 || pairs.positive.dim(0) != rows ||
      !pairs.positive.same_shape(pairs.negative)) {
    throw ShapeError("ms_loss", "reps " + reps->value.shape_string() + " vs pair sets " +
                                    pairs.positive.shape_string());
  }
  const Array& pos_mask = pairs.positive;
  const Array& neg_mask = pairs.negative;
  NodePtr sim = matmul(reps, transpose(reps));
  NodePtr centered = shift(sim, -config.epsilon);
  NodePtr neg_term = scale(log1p_sum_exp_rows(scale(centered, config.alpha), neg_mask),
                           real(1) / config.alpha);
  const real pos_sign = config.printed_sign ? config.beta : -config.beta;
  NodePtr pos_term = scale(log1p_sum_exp_rows(scale(centered, pos_sign), pos_mask),
                           real(1) / config.beta);
  return mean_all(add(neg_term, pos_term));
}

void init_dml_params(ParamStore& store, const AttentionConfig& config, Rng& rng) {
  init_attention_params(store, "dml/attn/", config, rng);
}

NodePtr stack_representations(const StackResult& stack, ParamBinding& binding,
                              const StackConfig& sconf, const DmlConfig& dconf) {
  const AttentionWeights shared = bind_attention_weights(binding, "dml/attn/", sconf.attention());
  const AttentionWeights* attn = dconf.bypass_attention ? nullptr : &shared;
  std::vector<NodePtr> fwd_layers, bwd_layers;
  for (const BiResult& layer : stack.layers) {
    fwd_layers.push_back(extract_representation(layer.fwd.hiddens, dconf.strategy, attn));
    bwd_layers.push_back(extract_representation(layer.bwd.hiddens, dconf.strategy, attn));
  }
  return concat_rows(squeeze_layers(fwd_layers), squeeze_layers(bwd_layers));
}

}  // namespace deari
