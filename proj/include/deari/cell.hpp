#pragma once

#include <string>
#include <vector>

#include "deari/graph.hpp"
#include "deari/params.hpp"
#include "deari/rng.hpp"
#include "deari/series.hpp"

namespace deari {

enum class CellType { gru, lstm };

struct CellConfig {
  int64_t input_dim = 0;
  int64_t hidden_dim = 108;
  CellType cell = CellType::gru;
};

/// Graph nodes for one direction's cell weights. The recurrent trio
/// (rnn_w, rnn_u, rnn_b) may be deterministic leaves or sampled Gaussian
/// nodes; everything downstream is agnostic. feat_w already carries the
/// structural zero diagonal.
struct CellWeights {
  NodePtr decay_h_w, decay_h_b;  // hidden-state decay, D -> H
  NodePtr hist_w, hist_b;        // history regression, H -> D
  NodePtr feat_w, feat_b;        // feature regression, D -> D, zero diagonal
  NodePtr decay_f_w, decay_f_b;  // feature decay, D -> D
  NodePtr gate_w, gate_b;        // combining gate, 2D -> D
  NodePtr rnn_w, rnn_u, rnn_b;   // recurrent cell, input width 2D
  CellType cell = CellType::gru;
  int64_t input_dim = 0;
  int64_t hidden_dim = 0;
};

/// Register one direction's cell parameters under `prefix`. Weights are
/// uniform in +-1/sqrt(fan_in); biases start at zero.
void init_cell_params(ParamStore& store, const std::string& prefix, const CellConfig& config,
                      Rng& rng);

/// Bind the deterministic weights registered under `prefix`.
CellWeights bind_cell_weights(ParamBinding& binding, const std::string& prefix,
                              const CellConfig& config);

/// gamma = exp(-max(0, delta*W + b)), elementwise in (0,1].
NodePtr temporal_decay(const NodePtr& delta, const NodePtr& w, const NodePtr& b);

/// Per-step intermediate products of the imputation cell.
struct StepNodes {
  NodePtr decay_h;     // hidden-state decay factor, [B,H]
  NodePtr h_decayed;   // decayed previous hidden state
  NodePtr x_hist;      // history-based estimate, [B,D]
  NodePtr x_hist_cmp;  // observation with missing entries from x_hist
  NodePtr x_feat;      // feature-wise estimate (zero-diagonal regression)
  NodePtr decay_f;     // feature decay factor, [B,D]
  NodePtr gate;        // learned combination gate, in (0,1)
  NodePtr x_comb;      // gate-combined estimate
  NodePtr imputation;  // observed passthrough + combined estimate
  NodePtr hidden;      // next hidden state
  NodePtr memory;      // next memory cell (LSTM only, else null)
};

/// One imputation step: decays the hidden state, forms history and
/// feature-wise estimates, combines them through the gate, and updates the
/// recurrent state on [imputation, mask].
StepNodes cell_step(const NodePtr& x, const NodePtr& m, const NodePtr& delta,
                    const NodePtr& h_prev, const NodePtr& c_prev, const CellWeights& w);

/// Unrolled products of one direction over a batch.
struct DirectionResult {
  std::vector<NodePtr> imputations;  // C_t, forward time order
  std::vector<NodePtr> hiddens;      // h_0..h_T, production order
  std::vector<StepNodes> steps;      // production order
  NodePtr recon_loss;                // observed-cell MAE of the three estimates
};

/// Unroll one direction. The backward direction consumes the time-reversed
/// (x, m, delta_bwd) stream and returns imputations re-reversed into forward
/// order. h0/c0 are supplied by the caller (zeros for layer 1).
DirectionResult run_direction(const SeriesBatch& batch, const CellWeights& w,
                              Direction direction, const NodePtr& h0, const NodePtr& c0);

/// C* = (C_fwd + C_bwd) / 2, per step.
std::vector<NodePtr> combine_bidirectional(const std::vector<NodePtr>& c_fwd,
                                           const std::vector<NodePtr>& c_bwd);

struct BiResult {
  DirectionResult fwd;
  DirectionResult bwd;
  std::vector<NodePtr> c_star;  // forward time order
  NodePtr consistency;          // mean |C_fwd - C_bwd| over all cells
  NodePtr loss;                 // recon_fwd + recon_bwd + w_cons * consistency
};

/// Both directions plus the combined imputation and the per-layer loss.
BiResult run_bidirectional(const SeriesBatch& batch, const CellWeights& wf, const CellWeights& wb,
                           const NodePtr& h0f, const NodePtr& h0b, real consistency_weight);

/// Zero-filled [B,H] state node.
NodePtr zero_state(int64_t batch, int64_t hidden);

}  // namespace deari
