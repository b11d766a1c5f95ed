#pragma once

#include <string>
#include <vector>

#include "deari/attention.hpp"
#include "deari/graph.hpp"
#include "deari/stack.hpp"

namespace deari {

enum class RepStrategy { cls, last, mean };

RepStrategy parse_strategy(const std::string& name);
std::string strategy_name(RepStrategy s);

/// Metric-learning configuration over direction-tagged representations.
/// `printed_sign` selects e^{+beta(S-eps)} inside the positive term, matching
/// the source formula as printed; the default uses the conventional
/// e^{-beta(S-eps)} so that pulling positives together lowers the loss.
struct DmlConfig {
  RepStrategy strategy = RepStrategy::cls;
  real margin = real(0.5);  // lambda
  real alpha = real(2);
  real beta = real(50);
  real epsilon = real(1);
  real weight = real(0.1);  // contribution to the training objective
  bool printed_sign = false;
  bool bypass_attention = false;  // unit-test mode: identity instead of the encoder
};

/// One direction's summary of a hidden sequence: encoder (with CLS), then a
/// reduction (CLS / last token / mean over non-CLS tokens), L2-normalized.
/// With `attn == nullptr` the encoder is bypassed (identity over tokens).
NodePtr extract_representation(const std::vector<NodePtr>& hidden_seq, RepStrategy strategy,
                               const AttentionWeights* attn, AttentionTrace* trace = nullptr);

/// Mean of per-layer representations, re-normalized; identity for one layer.
NodePtr squeeze_layers(const std::vector<NodePtr>& per_layer_reps);

/// Row layout of a batch's representations: rows 0..N-1 forward,
/// rows N..2N-1 backward, so row i pairs with row (i+N) mod 2N.
struct Triplet {
  int64_t anchor = 0;
  int64_t positive = 0;
  int64_t negative = 0;
};

struct TripletSet {
  std::vector<Triplet> triplets;  // each violates the margin condition
  real margin = 0;
  int64_t rows = 0;
};

/// Online hard mining: for each anchor the same-sample opposite-direction row
/// is the positive and every other sample's rows are negative candidates; a
/// triplet is kept iff d(A,P) + margin >= d(A,N). One sample yields an empty
/// set.
TripletSet mine_triplets(const Array& reps, real margin);

/// Per-anchor positive/negative pair indicators, [rows, rows] each.
struct PairSets {
  Array positive;
  Array negative;
};
PairSets pair_sets(const TripletSet& set);

/// Multi-Similarity loss over the mined pair structure, log-sum-exp stable.
/// Similarities are inner products of the (unit-norm) representation rows.
NodePtr ms_loss(const NodePtr& reps, const PairSets& pairs, const DmlConfig& config);

/// Representations for a whole stack: per-layer per-direction extraction with
/// the shared DML encoder, squeezed across layers, rows packed [fwd; bwd].
void init_dml_params(ParamStore& store, const AttentionConfig& config, Rng& rng);
NodePtr stack_representations(const StackResult& stack, ParamBinding& binding,
                              const StackConfig& sconf, const DmlConfig& dconf);

}  // namespace deari
