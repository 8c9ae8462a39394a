#pragma once

#include <cmath>
#include <vector>

#include "engageformer/graph.hpp"
#include "engageformer/rng.hpp"
#include "engageformer/tokenizer.hpp"

namespace engageformer {

// Multi-head self-attention parameters bound into a graph. Head dimension is
// floor(d / heads); the concatenated head outputs (heads * d_head wide, which
// may be slightly narrower than d) are mapped back to d by wo.
struct AttentionValues {
    std::vector<Value> wq, bq;  // per head: d x d_head, 1 x d_head
    std::vector<Value> wk, bk;
    std::vector<Value> wv, bv;
    Value wo;                   // (heads * d_head) x d
    Value bo;                   // 1 x d
};

struct EncoderLayerValues {
    Value ln1_gamma, ln1_beta;
    AttentionValues att;
    Value ln2_gamma, ln2_beta;
    Value mlp_w1, mlp_b1;  // d x d_mlp
    Value mlp_w2, mlp_b2;  // d_mlp x d
    double drop_prob = 0.0;
};

// Optional per-layer capture of attention/softmax matrices for inspection.
struct AttentionTrace {
    std::vector<Value> head_attention;  // N x N rows summing to 1
};

// softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated, then wo.
template <typename S>
Value msa(Graph<S>& g, Value z, const AttentionValues& p, AttentionTrace* trace = nullptr) {
    const std::size_t heads = p.wq.size();
    const std::size_t d_head = g.val(p.wq[0]).cols();
    const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d_head)));
    std::vector<Value> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Value q = g.add_row(g.matmul(z, p.wq[h]), p.bq[h]);
        Value k = g.add_row(g.matmul(z, p.wk[h]), p.bk[h]);
        Value v = g.add_row(g.matmul(z, p.wv[h]), p.bv[h]);
        Value scores = g.scale(g.matmul(q, g.transpose(k)), inv_sqrt);
        Value attn = g.softmax_rows(scores);
        if (trace) trace->head_attention.push_back(attn);
        outs.push_back(g.matmul(attn, v));
    }
    Value cat = heads == 1 ? outs[0] : g.concat_cols(outs);
    return g.add_row(g.matmul(cat, p.wo), p.bo);
}

// Pre-norm encoder layer:
//   y = drop(MSA(LN(z))) + z
//   z' = drop(MLP(LN(y))) + y
// During training each residual branch is independently dropped with
// probability drop_prob and kept branches are scaled by 1/(1 - drop_prob);
// at inference both branches are always applied unscaled. The two keep/drop
// decisions are drawn from `drop` up front so the stream advances identically
// whether or not a branch is built.
template <typename S>
Value encoder_layer(Graph<S>& g, Value z, const EncoderLayerValues& p, Rng drop, bool training,
                    AttentionTrace* trace = nullptr) {
    const double dp = training ? p.drop_prob : 0.0;
    const bool drop_att = drop.bernoulli(dp);
    const bool drop_mlp = drop.bernoulli(dp);
    const S keep_scale = static_cast<S>(dp > 0.0 ? 1.0 / (1.0 - dp) : 1.0);

    Value y = z;
    if (!drop_att) {
        Value branch = msa(g, g.layer_norm(z, p.ln1_gamma, p.ln1_beta, S(1e-6)), p.att, trace);
        if (dp > 0.0) branch = g.scale(branch, keep_scale);
        y = g.add(z, branch);
    }
    Value out = y;
    if (!drop_mlp) {
        Value hidden = g.gelu(g.add_row(
            g.matmul(g.layer_norm(y, p.ln2_gamma, p.ln2_beta, S(1e-6)), p.mlp_w1), p.mlp_b1));
        Value branch = g.add_row(g.matmul(hidden, p.mlp_w2), p.mlp_b2);
        if (dp > 0.0) branch = g.scale(branch, keep_scale);
        out = g.add(y, branch);
    }
    return out;
}

// Stochastic-depth rate for view-encoder layer `layer` (0-based) in a stack of
// `total` layers: linear ramp from 0 at the first layer to `max_rate` at the
// last. A single-layer stack is never dropped.
inline double drop_rate_for_layer(std::size_t layer, std::size_t total, double max_rate) {
    if (total <= 1) return 0.0;
    return max_rate * static_cast<double>(layer) / static_cast<double>(total - 1);
}

// Applies the layers of a stack in order. Each layer consumes its own child
// stream of `rng`, keyed by layer index.
template <typename S>
Value run_stack(Graph<S>& g, Value z, const std::vector<EncoderLayerValues>& layers,
                const Rng& rng, bool training) {
    Value cur = z;
    for (std::size_t l = 0; l < layers.size(); ++l)
        cur = encoder_layer(g, cur, layers[l], rng.derive(l), training);
    return cur;
}

}  // namespace engageformer
