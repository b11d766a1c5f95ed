#include "deari/attention.hpp"

#include <cmath>

namespace deari {

namespace {

Array uniform_init(Rng& rng, Shape shape, int64_t fan_in) {
  Array a(std::move(shape));
  const real bound = real(1) / std::sqrt(static_cast<real>(fan_in));
  rng.fill_uniform(a, -bound, bound);
  return a;
}

NodePtr linear(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
  return add(matmul(x, w), b);
}

NodePtr layer_norm_affine(const NodePtr& x, const NodePtr& gain, const NodePtr& bias) {
  return add(mul(layer_norm_last(x), gain), bias);
}

}  // namespace

int64_t attention_ffn_width(const AttentionConfig& config) {
  return config.ffn_width > 0 ? config.ffn_width : 4 * config.width;
}

void init_attention_params(ParamStore& store, const std::string& prefix,
                           const AttentionConfig& config, Rng& rng) {
  const int64_t h = config.width;
  if (config.heads <= 0 || h % config.heads != 0) {
    throw std::invalid_argument("attention width " + std::to_string(h) +
                                " not divisible by head count " + std::to_string(config.heads));
  }
  if (config.encoder_depth < 1) throw std::invalid_argument("encoder depth must be >= 1");
  const int64_t f = attention_ffn_width(config);
  store.add(prefix + "cls", uniform_init(rng, {1, h}, h));
  for (int64_t e = 0; e < config.encoder_depth; ++e) {
    const std::string p = prefix + "enc" + std::to_string(e) + "/";
    for (const char* name : {"q", "k", "v", "o"}) {
      store.add(p + name + std::string("_w"), uniform_init(rng, {h, h}, h));
      store.add(p + name + std::string("_b"), Array({h}));
    }
    store.add(p + "ffn1_w", uniform_init(rng, {h, f}, h));
    store.add(p + "ffn1_b", Array({f}));
    store.add(p + "ffn2_w", uniform_init(rng, {f, h}, f));
    store.add(p + "ffn2_b", Array({h}));
    store.add(p + "ln1_g", Array({h}, real(1)));
    store.add(p + "ln1_b", Array({h}));
    store.add(p + "ln2_g", Array({h}, real(1)));
    store.add(p + "ln2_b", Array({h}));
  }
}

AttentionWeights bind_attention_weights(ParamBinding& binding, const std::string& prefix,
                                        const AttentionConfig& config) {
  AttentionWeights w;
  w.config = config;
  w.cls = binding[prefix + "cls"];
  for (int64_t e = 0; e < config.encoder_depth; ++e) {
    const std::string p = prefix + "enc" + std::to_string(e) + "/";
    EncoderWeights enc;
    enc.q_w = binding[p + "q_w"];
    enc.q_b = binding[p + "q_b"];
    enc.k_w = binding[p + "k_w"];
    enc.k_b = binding[p + "k_b"];
    enc.v_w = binding[p + "v_w"];
    enc.v_b = binding[p + "v_b"];
    enc.o_w = binding[p + "o_w"];
    enc.o_b = binding[p + "o_b"];
    enc.ffn1_w = binding[p + "ffn1_w"];
    enc.ffn1_b = binding[p + "ffn1_b"];
    enc.ffn2_w = binding[p + "ffn2_w"];
    enc.ffn2_b = binding[p + "ffn2_b"];
    enc.ln1_g = binding[p + "ln1_g"];
    enc.ln1_b = binding[p + "ln1_b"];
    enc.ln2_g = binding[p + "ln2_g"];
    enc.ln2_b = binding[p + "ln2_b"];
    w.encoders.push_back(std::move(enc));
  }
  return w;
}

NodePtr encoder_forward(const NodePtr& tokens, const AttentionWeights& w, AttentionTrace* trace) {
  if (tokens->value.rank() != 3 || tokens->value.dim(2) != w.config.width) {
    throw ShapeError("encoder_forward", "tokens " + tokens->value.shape_string() + " vs width " +
                                            std::to_string(w.config.width));
  }
  const int64_t heads = w.config.heads;
  const int64_t head_dim = w.config.width / heads;
  const real inv_sqrt = real(1) / std::sqrt(static_cast<real>(head_dim));
  NodePtr x = tokens;
  for (const EncoderWeights& enc : w.encoders) {
    NodePtr q = linear(x, enc.q_w, enc.q_b);
    NodePtr k = linear(x, enc.k_w, enc.k_b);
    NodePtr v = linear(x, enc.v_w, enc.v_b);
    NodePtr ctx;
    for (int64_t hd = 0; hd < heads; ++hd) {
      NodePtr qh = slice_last(q, hd * head_dim, head_dim);
      NodePtr kh = slice_last(k, hd * head_dim, head_dim);
      NodePtr vh = slice_last(v, hd * head_dim, head_dim);
      NodePtr probs = softmax_last(scale(bmm_nt(qh, kh), inv_sqrt));
      if (trace) trace->probs.push_back(probs);
      NodePtr out = bmm(probs, vh);
      ctx = ctx ? concat_last(ctx, out) : out;
    }
    NodePtr attended = linear(ctx, enc.o_w, enc.o_b);
    NodePtr u = layer_norm_affine(add(attended, x), enc.ln1_g, enc.ln1_b);
    NodePtr ffn = linear(relu(linear(u, enc.ffn1_w, enc.ffn1_b)), enc.ffn2_w, enc.ffn2_b);
    x = layer_norm_affine(add(ffn, u), enc.ln2_g, enc.ln2_b);
  }
  return x;
}

NodePtr attention_block_tokens(const NodePtr& tokens, const AttentionWeights& w,
                               AttentionTrace* trace) {
  const int64_t batch = tokens->value.dim(0);
  NodePtr with_cls = concat_axis1(repeat_rows(w.cls, batch), tokens);
  NodePtr encoded = encoder_forward(with_cls, w, trace);
  return mean_axis1(slice_axis1(encoded, 0, 1));  // transformed CLS position
}

NodePtr attention_block(const std::vector<NodePtr>& hidden_seq, const AttentionWeights& w,
                        AttentionTrace* trace) {
  if (hidden_seq.empty()) throw ShapeError("attention_block", "empty hidden sequence");
  return attention_block_tokens(stack_axis1(hidden_seq), w, trace);
}

}  // namespace deari
