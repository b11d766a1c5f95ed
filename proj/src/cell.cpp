#include "deari/cell.hpp"

#include <cmath>
#include <iostream>

namespace deari {

namespace {

int64_t gate_count(CellType cell) { return cell == CellType::gru ? 3 : 4; }

Array uniform_init(Rng& rng, Shape shape, int64_t fan_in) {
  Array a(std::move(shape));
  const real bound = real(1) / std::sqrt(static_cast<real>(fan_in));
  rng.fill_uniform(a, -bound, bound);
  return a;
}

NodePtr linear(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
  return add(matmul(x, w), b);
}

Array eye_complement(int64_t d) {
  Array m({d, d}, real(1));
  for (int64_t i = 0; i < d; ++i) m.at(i, i) = 0;
  return m;
}

NodePtr slice_feature(const Array& a, int64_t t) {
  const int64_t b = a.dim(0), d = a.dim(2);
  Array out({b, d});
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t di = 0; di < d; ++di) out.at(bi, di) = a.at(bi, t, di);
  }
  return constant(std::move(out));
}

}  // namespace

void init_cell_params(ParamStore& store, const std::string& prefix, const CellConfig& config,
                      Rng& rng) {
  const int64_t d = config.input_dim, h = config.hidden_dim;
  const int64_t g = gate_count(config.cell) * h;
  store.add(prefix + "decay_h_w", uniform_init(rng, {d, h}, d));
  store.add(prefix + "decay_h_b", Array({h}));
  store.add(prefix + "hist_w", uniform_init(rng, {h, d}, h));
  store.add(prefix + "hist_b", Array({d}));
  store.add(prefix + "feat_w", uniform_init(rng, {d, d}, d));
  store.add(prefix + "feat_b", Array({d}));
  store.add(prefix + "decay_f_w", uniform_init(rng, {d, d}, d));
  store.add(prefix + "decay_f_b", Array({d}));
  store.add(prefix + "gate_w", uniform_init(rng, {2 * d, d}, 2 * d));
  store.add(prefix + "gate_b", Array({d}));
  store.add(prefix + "rnn_w", uniform_init(rng, {2 * d, g}, 2 * d));
  store.add(prefix + "rnn_u", uniform_init(rng, {h, g}, h));
  store.add(prefix + "rnn_b", Array({g}));
}

CellWeights bind_cell_weights(ParamBinding& binding, const std::string& prefix,
                              const CellConfig& config) {
  CellWeights w;
  w.decay_h_w = binding[prefix + "decay_h_w"];
  w.decay_h_b = binding[prefix + "decay_h_b"];
  w.hist_w = binding[prefix + "hist_w"];
  w.hist_b = binding[prefix + "hist_b"];
  // structural zero diagonal holds under any optimizer state
  w.feat_w = mul(binding[prefix + "feat_w"], constant(eye_complement(config.input_dim)));
  w.feat_b = binding[prefix + "feat_b"];
  w.decay_f_w = binding[prefix + "decay_f_w"];
  w.decay_f_b = binding[prefix + "decay_f_b"];
  w.gate_w = binding[prefix + "gate_w"];
  w.gate_b = binding[prefix + "gate_b"];
  w.rnn_w = binding[prefix + "rnn_w"];
  w.rnn_u = binding[prefix + "rnn_u"];
  w.rnn_b = binding[prefix + "rnn_b"];
  w.cell = config.cell;
  w.input_dim = config.input_dim;
  w.hidden_dim = config.hidden_dim;
  return w;
}

NodePtr temporal_decay(const NodePtr& delta, const NodePtr& w, const NodePtr& b) {
  return exp_op(neg(relu(linear(delta, w, b))));
}

StepNodes cell_step(const NodePtr& x, const NodePtr& m, const NodePtr& delta,
                    const NodePtr& h_prev, const NodePtr& c_prev, const CellWeights& w) {
  const int64_t h = w.hidden_dim;
  StepNodes s;
  s.decay_h = temporal_decay(delta, w.decay_h_w, w.decay_h_b);
  s.h_decayed = mul(h_prev, s.decay_h);
  s.x_hist = linear(s.h_decayed, w.hist_w, w.hist_b);
  NodePtr one_minus_m = shift(neg(m), 1);
  s.x_hist_cmp = add(mul(m, x), mul(one_minus_m, s.x_hist));
  s.x_feat = linear(s.x_hist_cmp, w.feat_w, w.feat_b);
  s.decay_f = temporal_decay(delta, w.decay_f_w, w.decay_f_b);
  s.gate = sigmoid(linear(concat_last(s.decay_f, m), w.gate_w, w.gate_b));
  s.x_comb = add(mul(s.gate, s.x_feat), mul(shift(neg(s.gate), 1), s.x_hist_cmp));
  s.imputation = add(mul(m, x), mul(one_minus_m, s.x_comb));

  NodePtr input = concat_last(s.imputation, m);
  NodePtr xi = linear(input, w.rnn_w, w.rnn_b);
  NodePtr hi = matmul(s.h_decayed, w.rnn_u);
  if (w.cell == CellType::gru) {
    NodePtr r = sigmoid(add(slice_last(xi, 0, h), slice_last(hi, 0, h)));
    NodePtr z = sigmoid(add(slice_last(xi, h, h), slice_last(hi, h, h)));
    NodePtr n = tanh_op(add(slice_last(xi, 2 * h, h), mul(r, slice_last(hi, 2 * h, h))));
    s.hidden = add(mul(shift(neg(z), 1), n), mul(z, s.h_decayed));
    s.memory = nullptr;
  } else {
    NodePtr pre = add(xi, hi);
    NodePtr i_g = sigmoid(slice_last(pre, 0, h));
    NodePtr f_g = sigmoid(slice_last(pre, h, h));
    NodePtr g_g = tanh_op(slice_last(pre, 2 * h, h));
    NodePtr o_g = sigmoid(slice_last(pre, 3 * h, h));
    s.memory = add(mul(f_g, c_prev), mul(i_g, g_g));
    s.hidden = mul(o_g, tanh_op(s.memory));
  }
  return s;
}

DirectionResult run_direction(const SeriesBatch& batch, const CellWeights& w,
                              Direction direction, const NodePtr& h0, const NodePtr& c0) {
  const int64_t t_len = batch.steps();
  DirectionResult out;
  out.imputations.resize(static_cast<size_t>(t_len));
  out.hiddens.push_back(h0);

  NodePtr hist_err, feat_err, comb_err;
  NodePtr h = h0;
  NodePtr c = c0;
  const Array& delta = direction == Direction::forward ? batch.delta_fwd : batch.delta_bwd;
  for (int64_t i = 0; i < t_len; ++i) {
    const int64_t t = direction == Direction::forward ? i : t_len - 1 - i;
    NodePtr x = slice_feature(batch.values, t);
    NodePtr m = slice_feature(batch.mask, t);
    NodePtr dt = slice_feature(delta, t);
    StepNodes s = cell_step(x, m, dt, h, c, w);
    h = s.hidden;
    if (s.memory) c = s.memory;
    out.hiddens.push_back(h);
    out.imputations[static_cast<size_t>(t)] = s.imputation;

    NodePtr e_hist = sum_all(mul(abs_op(sub(s.x_hist, x)), m));
    NodePtr e_feat = sum_all(mul(abs_op(sub(s.x_feat, x)), m));
    NodePtr e_comb = sum_all(mul(abs_op(sub(s.x_comb, x)), m));
    hist_err = hist_err ? add(hist_err, e_hist) : e_hist;
    feat_err = feat_err ? add(feat_err, e_feat) : e_feat;
    comb_err = comb_err ? add(comb_err, e_comb) : e_comb;
    out.steps.push_back(std::move(s));
  }

  const int64_t observed = batch.observed_count();
  if (observed == 0) {
    std::cerr << "warning: reconstruction loss over zero observed cells, returning 0\n";
    out.recon_loss = constant(Array::scalar(0));
  } else {
    const real inv = real(1) / static_cast<real>(observed);
    out.recon_loss = scale(add(add(hist_err, feat_err), comb_err), inv);
  }
  return out;
}

std::vector<NodePtr> combine_bidirectional(const std::vector<NodePtr>& c_fwd,
                                           const std::vector<NodePtr>& c_bwd) {
  if (c_fwd.size() != c_bwd.size()) {
    throw ShapeError("combine_bidirectional", "sequence lengths " + std::to_string(c_fwd.size()) +
                                                  " vs " + std::to_string(c_bwd.size()));
  }
  std::vector<NodePtr> out;
  out.reserve(c_fwd.size());
  for (size_t t = 0; t < c_fwd.size(); ++t) {
    out.push_back(scale(add(c_fwd[t], c_bwd[t]), real(0.5)));
  }
  return out;
}

BiResult run_bidirectional(const SeriesBatch& batch, const CellWeights& wf, const CellWeights& wb,
                           const NodePtr& h0f, const NodePtr& h0b, real consistency_weight) {
  BiResult r;
  NodePtr c0f = zero_state(batch.samples(), wf.hidden_dim);
  NodePtr c0b = zero_state(batch.samples(), wb.hidden_dim);
  r.fwd = run_direction(batch, wf, Direction::forward, h0f, c0f);
  r.bwd = run_direction(batch, wb, Direction::backward, h0b, c0b);
  r.c_star = combine_bidirectional(r.fwd.imputations, r.bwd.imputations);

  NodePtr gap;
  for (size_t t = 0; t < r.fwd.imputations.size(); ++t) {
    NodePtr g = sum_all(abs_op(sub(r.fwd.imputations[t], r.bwd.imputations[t])));
    gap = gap ? add(gap, g) : g;
  }
  const real cells = static_cast<real>(batch.values.numel());
  r.consistency = scale(gap, real(1) / cells);
  r.loss = add(add(r.fwd.recon_loss, r.bwd.recon_loss), scale(r.consistency, consistency_weight));
  return r;
}

NodePtr zero_state(int64_t batch, int64_t hidden) { return constant(Array({batch, hidden})); }

}  // namespace deari
