#pragma once

#include <string>
#include <vector>

#include "deari/graph.hpp"
#include "deari/params.hpp"
#include "deari/rng.hpp"

namespace deari {

struct AttentionConfig {
  int64_t width = 108;        // token width H; must be divisible by heads
  int64_t encoder_depth = 2;  // number of encoder blocks
  int64_t heads = 4;
  int64_t ffn_width = 0;  // 0 -> 4 * width
};

int64_t attention_ffn_width(const AttentionConfig& config);

/// Graph nodes for one CLS-initialized encoder stack.
struct EncoderWeights {
  NodePtr q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  NodePtr ffn1_w, ffn1_b, ffn2_w, ffn2_b;
  NodePtr ln1_g, ln1_b, ln2_g, ln2_b;
};

struct AttentionWeights {
  NodePtr cls;  // [1,H]
  std::vector<EncoderWeights> encoders;
  AttentionConfig config;
};

void init_attention_params(ParamStore& store, const std::string& prefix,
                           const AttentionConfig& config, Rng& rng);
AttentionWeights bind_attention_weights(ParamBinding& binding, const std::string& prefix,
                                        const AttentionConfig& config);

/// Test hook: captures per-encoder, per-head attention probabilities.
struct AttentionTrace {
  std::vector<NodePtr> probs;  // each [B, S, S]
};

/// Encoder stack over a token sequence [B,S,H]. Each block applies
/// u = LN(MSA(x) + x)
/// y = LN(FFN(u) + u)
/// with layer norms carrying learned affine parameters. No positional
/// encoding: hidden states already encode temporal position.
NodePtr encoder_forward(const NodePtr& tokens, const AttentionWeights& w,
                        AttentionTrace* trace = nullptr);

/// Prepend the learnable CLS embedding to the hidden-state sequence, run the
/// encoder stack, and return the transformed CLS position [B,H].
NodePtr attention_block(const std::vector<NodePtr>& hidden_seq, const AttentionWeights& w,
                        AttentionTrace* trace = nullptr);

/// Same, over an already-stacked token tensor [B,S,H].
NodePtr attention_block_tokens(const NodePtr& tokens, const AttentionWeights& w,
                               AttentionTrace* trace = nullptr);

}  // namespace deari
