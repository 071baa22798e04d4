#pragma once

#include <cmath>
#include <string>

#include "svc/graph.hpp"

namespace svc {

// LoRA attachment for one attention block; adapters live on the q/k/v
// projections only. `suffix` selects which adapter set ("lora" or "lora2").
struct LoraSpec {
  std::string suffix;
  int rank = 0;
  double alpha = 1.0;
};

// y = x W (+ alpha/rank * (x A) B when lora given for this projection).
inline int linear_with_lora(Graph& g, int x, const std::string& weight_name,
                            const LoraSpec* lora) {
  int y = g.matmul(x, g.param(weight_name));
  if (lora && lora->rank > 0) {
    int a = g.param(weight_name + "." + lora->suffix + "_a");
    int b = g.param(weight_name + "." + lora->suffix + "_b");
    int delta = g.matmul(g.matmul(x, a), b);
    y = g.add(y, g.scale(delta, lora->alpha / lora->rank));
  }
  return y;
}

// Pre-norm block: x + MHA(RMSNorm(x)); x + SwiGLU(RMSNorm(x)).
// Returns the block output node.
inline int transformer_layer(Graph& g, int x, const std::string& prefix,
                             int num_heads, AttnMask mask, int block,
                             const LoraSpec* lora) {
  const int d = g.value(x).cols;
  const int dh = d / num_heads;

  int normed = g.rmsnorm(x, g.param(prefix + ".attn_norm.gain"));
  int q = linear_with_lora(g, normed, prefix + ".attn.wq", lora);
  int k = linear_with_lora(g, normed, prefix + ".attn.wk", lora);
  int v = linear_with_lora(g, normed, prefix + ".attn.wv", lora);

  std::vector<int> ctx_heads;
  ctx_heads.reserve(num_heads);
  const Real inv_sqrt = 1.0 / std::sqrt(static_cast<Real>(dh));
  for (int h = 0; h < num_heads; ++h) {
    int qh = g.slice_cols(q, h * dh, (h + 1) * dh);
    int kh = g.slice_cols(k, h * dh, (h + 1) * dh);
    int vh = g.slice_cols(v, h * dh, (h + 1) * dh);
    int scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
    int probs = g.attn_softmax_rows(scores, mask, block);
    ctx_heads.push_back(g.matmul(probs, vh));
  }
  int ctx = g.concat_cols(ctx_heads);
  int attn_out = g.matmul(ctx, g.param(prefix + ".attn.wo"));
  x = g.add(x, attn_out);

  int normed2 = g.rmsnorm(x, g.param(prefix + ".mlp_norm.gain"));
  int gate = g.silu_op(g.matmul(normed2, g.param(prefix + ".mlp.w1")));
  int up = g.matmul(normed2, g.param(prefix + ".mlp.w3"));
  int mlp_out = g.matmul(g.mul(gate, up), g.param(prefix + ".mlp.w2"));
  return g.add(x, mlp_out);
}

// Registers one layer's tensors under `prefix` into `group`.
inline void register_transformer_layer(ParamStore& ps, const std::string& prefix,
                                       const std::string& group, int d, int inter) {
  ps.add(prefix + ".attn_norm.gain", group, 1, d);
  ps.add(prefix + ".attn.wq", group, d, d);
  ps.add(prefix + ".attn.wk", group, d, d);
  ps.add(prefix + ".attn.wv", group, d, d);
  ps.add(prefix + ".attn.wo", group, d, d);
  ps.add(prefix + ".mlp_norm.gain", group, 1, d);
  ps.add(prefix + ".mlp.w1", group, d, inter);
  ps.add(prefix + ".mlp.w3", group, d, inter);
  ps.add(prefix + ".mlp.w2", group, inter, d);
}

// Registers one adapter set for a layer's q/k/v projections.
inline void register_layer_lora(ParamStore& ps, const std::string& prefix,
                                const std::string& group, const std::string& suffix,
                                int d, int rank) {
  for (const char* w : {"wq", "wk", "wv"}) {
    ps.add(prefix + ".attn." + w + "." + suffix + "_a", group, d, rank);
    ps.add(prefix + ".attn." + w + "." + suffix + "_b", group, rank, d);
  }
}

}  // namespace svc
