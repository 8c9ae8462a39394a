#pragma once

#include <cmath>
#include <vector>

#include "engageformer/graph.hpp"
#include "engageformer/tokenizer.hpp"

namespace engageformer {

// Cross-view attention fusion weights for one adjacent view pair. Single
// head, all matrices d x d; the softmax denominator uses d_k = d.
struct CvafValues {
    Value wproj;  // key/value pre-projection applied to the larger view
    Value wq, wk, wv;
};

// out = softmax(Wq z_i (Wk y)^T / sqrt(d)) Wv y + z_i   with   y = Wproj z_next.
// z_i is the query view (fewer tokens), z_next the adjacent larger view; the
// output keeps z_i's shape.
template <typename S>
Value cvaf(Graph<S>& g, Value z_i, Value z_next, const CvafValues& p) {
    const std::size_t d = g.val(z_i).cols();
    if (g.val(z_next).cols() != d)
        throw ConfigError("cvaf token dimension mismatch: " + shape_str(g.val(z_i).shape()) +
                          " vs " + shape_str(g.val(z_next).shape()));
    const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));
    Value y = g.matmul(z_next, p.wproj);
    Value q = g.matmul(z_i, p.wq);
    Value k = g.matmul(y, p.wk);
    Value scores = g.scale(g.matmul(q, g.transpose(k)), inv_sqrt);
    Value attn = g.softmax_rows(scores);
    Value update = g.matmul(attn, g.matmul(y, p.wv));
    return g.add(update, z_i);
}

// One fusion round across all adjacent pairs. Views must already be in
// ascending token-count order; view i is updated with view i+1 as keys and
// values, the largest view passes through unchanged. All updates read the
// pre-round snapshot, so the order of pairs is irrelevant.
template <typename S>
std::vector<TokenSequence> fuse_all(Graph<S>& g, const std::vector<TokenSequence>& views,
                                    const std::vector<CvafValues>& params) {
    if (views.size() >= 2 && params.size() != views.size() - 1)
        throw ConfigError("fuse_all needs one parameter set per adjacent pair: got " +
                          std::to_string(params.size()) + " for " +
                          std::to_string(views.size()) + " views");
    for (std::size_t i = 0; i + 1 < views.size(); ++i)
        if (views[i].n > views[i + 1].n)
            throw ConfigError("fuse_all requires views in ascending token order");
    std::vector<TokenSequence> out = views;
    for (std::size_t i = 0; i + 1 < views.size(); ++i)
        out[i].tokens = cvaf(g, views[i].tokens, views[i + 1].tokens, params[i]);
    return out;
}

// Attention-based sequence pooling: weights = softmax((z Ws)^T), output
// weights . z, a convex combination of the tokens.
template <typename S>
Value sequence_pool(Graph<S>& g, Value z, Value ws, Value* out_weights = nullptr) {
    Value scores = g.transpose(g.matmul(z, ws));       // 1 x N
    Value weights = g.softmax_rows(scores);            // 1 x N, sums to 1
    if (out_weights) *out_weights = weights;
    return g.matmul(weights, z);                       // 1 x d
}

}  // namespace engageformer
