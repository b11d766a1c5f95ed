#include "deari/stack.hpp"

namespace deari {

namespace {

std::string layer_prefix(int64_t l, Direction dir) {
  return "layer" + std::to_string(l) + (dir == Direction::forward ? "/fwd/" : "/bwd/");
}

std::string attn_prefix(int64_t l, Direction dir) {
  return "attn" + std::to_string(l) + (dir == Direction::forward ? "/fwd/" : "/bwd/");
}

}  // namespace

void init_stack_params(ParamStore& store, const StackConfig& config, Rng& rng) {
  if (config.layers < 1) throw std::invalid_argument("stack needs at least one layer");
  for (int64_t l = 1; l <= config.layers; ++l) {
    init_cell_params(store, layer_prefix(l, Direction::forward), config.cell, rng);
    init_cell_params(store, layer_prefix(l, Direction::backward), config.cell, rng);
    if (l > 1) {
      init_attention_params(store, attn_prefix(l, Direction::forward), config.attention(), rng);
      init_attention_params(store, attn_prefix(l, Direction::backward), config.attention(), rng);
    }
  }
}

StackResult stack_forward(const SeriesBatch& batch, ParamBinding& binding,
                          const StackConfig& config, const CellBinder& binder) {
  const CellBinder bind_cell = binder ? binder : CellBinder(bind_cell_weights);
  StackResult result;
  NodePtr loss_sum;
  for (int64_t l = 1; l <= config.layers; ++l) {
    NodePtr h0f, h0b;
    if (l == 1) {
      h0f = zero_state(batch.samples(), config.cell.hidden_dim);
      h0b = zero_state(batch.samples(), config.cell.hidden_dim);
    } else {
      const BiResult& below = result.layers.back();
      AttentionWeights af =
          bind_attention_weights(binding, attn_prefix(l, Direction::forward), config.attention());
      AttentionWeights ab =
          bind_attention_weights(binding, attn_prefix(l, Direction::backward), config.attention());
      h0f = attention_block(below.fwd.hiddens, af);
      h0b = attention_block(below.bwd.hiddens, ab);
    }
    result.h0.push_back(h0f);
    result.h0.push_back(h0b);
    CellWeights wf = bind_cell(binding, layer_prefix(l, Direction::forward), config.cell);
    CellWeights wb = bind_cell(binding, layer_prefix(l, Direction::backward), config.cell);
    BiResult layer = run_bidirectional(batch, wf, wb, h0f, h0b, config.consistency_weight);
    loss_sum = loss_sum ? add(loss_sum, layer.loss) : layer.loss;
    result.layers.push_back(std::move(layer));
  }
  result.pooled_loss = scale(loss_sum, real(1) / static_cast<real>(config.layers));
  return result;
}

ParameterCounts parameter_count(const StackConfig& config) {
  ParameterCounts counts;
  Rng rng(0);
  {
    ParamStore probe;
    init_cell_params(probe, "p/", config.cell, rng);
    counts.backbone_per_direction = probe.scalar_count();
  }
  {
    ParamStore probe;
    init_attention_params(probe, "p/", config.attention(), rng);
    counts.attention_per_direction = probe.scalar_count();
    AttentionConfig single = config.attention();
    single.encoder_depth = 1;
    ParamStore one;
    init_attention_params(one, "p/", single, rng);
    // CLS belongs to the block, not the encoder
    counts.encoder_block = one.scalar_count() - config.attention().width;
  }
  counts.per_layer_delta = 2 * counts.backbone_per_direction + 2 * counts.attention_per_direction;
  counts.total = 2 * config.layers * counts.backbone_per_direction +
                 2 * (config.layers - 1) * counts.attention_per_direction;
  return counts;
}

Array imputation_to_array(const std::vector<NodePtr>& c_star) {
  if (c_star.empty()) return Array();
  const int64_t b = c_star[0]->value.dim(0);
  const int64_t d = c_star[0]->value.dim(1);
  const int64_t t = static_cast<int64_t>(c_star.size());
  Array out({b, t, d});
  for (int64_t ti = 0; ti < t; ++ti) {
    const Array& v = c_star[static_cast<size_t>(ti)]->value;
    for (int64_t bi = 0; bi < b; ++bi) {
      for (int64_t di = 0; di < d; ++di) out.at(bi, ti, di) = v.at(bi, di);
    }
  }
  return out;
}

}  // namespace deari
