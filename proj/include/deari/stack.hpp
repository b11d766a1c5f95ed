#pragma once

#include <functional>
#include <string>
#include <vector>

#include "deari/attention.hpp"
#include "deari/cell.hpp"

namespace deari {

/// Multilayer model configuration. A 1-layer stack is exactly the
/// bidirectional cell model; deeper layers re-consume the raw batch and get
/// their initial hidden state from an attention block over the previous
/// layer's hidden sequence.
struct StackConfig {
  int64_t layers = 3;
  CellConfig cell;
  int64_t encoder_depth = 2;
  int64_t heads = 4;
  int64_t ffn_width = 0;  // 0 -> 4H
  real consistency_weight = real(0.1);

  AttentionConfig attention() const {
    return AttentionConfig{cell.hidden_dim, encoder_depth, heads, ffn_width};
  }
};

/// Parameter namespaces: layer{l}/{fwd,bwd}/... for cells (l in 1..L) and
/// attn{l}/{fwd,bwd}/... for the blocks initializing layer l (l in 2..L).
void init_stack_params(ParamStore& store, const StackConfig& config, Rng& rng);

/// Pluggable cell-weight binding so the Bayesian variant can substitute
/// sampled recurrent weights without touching the unroll.
using CellBinder =
    std::function<CellWeights(ParamBinding&, const std::string& prefix, const CellConfig&)>;

struct StackResult {
  std::vector<BiResult> layers;      // per-layer products, index 0 = layer 1
  std::vector<NodePtr> h0;           // per-layer initial states (fwd, bwd interleaved)
  NodePtr pooled_loss;               // mean over layers of the per-layer loss
  const std::vector<NodePtr>& imputation() const { return layers.back().c_star; }
};

/// Run the full stack: every layer consumes the raw (x, m, delta); layer 1
/// starts from zeros, layer l>1 from attention over layer l-1's hidden
/// sequence of the same direction. The pooled loss is the arithmetic mean of
/// per-layer losses; the emitted imputation is the deepest layer's.
StackResult stack_forward(const SeriesBatch& batch, ParamBinding& binding,
                          const StackConfig& config, const CellBinder& binder = nullptr);

/// Per-component parameter counts; totals grow affinely in the layer count.
struct ParameterCounts {
  int64_t backbone_per_direction = 0;
  int64_t encoder_block = 0;          // one encoder inside an attention block
  int64_t attention_per_direction = 0;  // CLS + encoder_depth encoders
  int64_t per_layer_delta = 0;        // count(L+1) - count(L)
  int64_t total = 0;                  // for config.layers
};

ParameterCounts parameter_count(const StackConfig& config);

/// Extract the [B,T,D] imputation array from per-step nodes.
Array imputation_to_array(const std::vector<NodePtr>& c_star);

}  // namespace deari
