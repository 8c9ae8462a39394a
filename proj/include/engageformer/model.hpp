#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "engageformer/encoder.hpp"
#include "engageformer/fusion.hpp"
#include "engageformer/graph.hpp"
#include "engageformer/rng.hpp"
#include "engageformer/tokenizer.hpp"

namespace engageformer {

struct TubeletSpec {
    std::size_t t = 0, h = 0, w = 0;
};

// Complete architecture configuration. Defaults are the reference setup:
// 32x112x112x3 input, tubelets 2/4/8 x8x8, d=512, three view-encoder layers
// with 3 heads, a single global layer with 5 heads, MLP width 1024, fusion
// after every view layer, six classes.
struct ModelConfig {
    ClipGeometry geometry{32, 112, 112, 3};
    std::vector<TubeletSpec> views{{2, 8, 8}, {4, 8, 8}, {8, 8, 8}};
    std::size_t d = 512;
    std::size_t view_layers = 3;
    std::size_t view_heads = 3;
    std::size_t global_layers = 1;
    std::size_t global_heads = 5;
    std::size_t mlp_dim = 1024;
    bool fusion_all = true;
    std::vector<std::size_t> fusion_layers;  // 1-based, used when !fusion_all
    double stochastic_depth = 0.1;           // max rate of the linear ramp
    std::size_t classes = 6;
    std::vector<std::string> labels{"Boredom",  "Confusion", "Engaged",
                                    "Frustration", "Sleepy",  "Yawning"};

    // Layers (1-based) after which a fusion round runs.
    std::vector<std::size_t> fusion_after() const {
        if (fusion_all) {
            std::vector<std::size_t> all(view_layers);
            std::iota(all.begin(), all.end(), std::size_t{1});
            return all;
        }
        return fusion_layers;
    }
};

struct ParamInfo {
    std::string name;
    Shape shape;
};

struct LayerIdx {
    std::size_t ln1_g = 0, ln1_b = 0;
    std::vector<std::size_t> wq, bq, wk, bk, wv, bv;
    std::size_t wo = 0, bo = 0;
    std::size_t ln2_g = 0, ln2_b = 0;
    std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
};

struct ViewIdx {
    TubeletSpec spec;
    std::size_t original_index = 0;  // position in ModelConfig::views
    std::size_t tokens = 0;
    std::size_t proj = 0, bias = 0, pos = 0;
    std::vector<LayerIdx> layers;
    std::size_t pool_ws = 0;
    std::shared_ptr<const std::vector<std::size_t>> gather_map;
};

struct PairIdx {
    std::size_t wproj = 0, wq = 0, wk = 0, wv = 0;
};

struct ShapeLedger {
    std::vector<std::size_t> tokens_per_view;  // ascending
    std::size_t global_len = 0;
    std::size_t logits = 0;
    std::size_t param_count = 0;
};

// Validated parameter layout: every tensor's dotted-path name, shape, and
// position, in checkpoint order. Views are kept in ascending token-count
// order (stable on ties) throughout the model.
struct ModelLayout {
    ModelConfig cfg;
    std::vector<ViewIdx> views;
    std::vector<std::vector<PairIdx>> fusion;  // [round][adjacent pair]
    std::size_t global_viewpos = 0;
    std::vector<LayerIdx> global_layers;
    std::size_t global_pool_ws = 0;
    std::size_t head_w = 0, head_b = 0;
    std::vector<std::size_t> fusion_after;     // 1-based layer indices, sorted
    std::vector<ParamInfo> params;
    ShapeLedger ledger;
};

namespace detail {

inline LayerIdx build_layer(std::vector<ParamInfo>& out, const std::string& prefix,
                            std::size_t d, std::size_t heads, std::size_t mlp_dim) {
    const std::size_t d_head = d / heads;
    auto put = [&out](std::string name, Shape shape) {
        out.push_back({std::move(name), std::move(shape)});
        return out.size() - 1;
    };
    LayerIdx ix;
    ix.ln1_g = put(prefix + ".ln1.gamma", {1, d});
    ix.ln1_b = put(prefix + ".ln1.beta", {1, d});
    for (std::size_t h = 0; h < heads; ++h) {
        const std::string hs = ".head" + std::to_string(h);
        ix.wq.push_back(put(prefix + ".msa.wq" + hs, {d, d_head}));
        ix.bq.push_back(put(prefix + ".msa.bq" + hs, {1, d_head}));
        ix.wk.push_back(put(prefix + ".msa.wk" + hs, {d, d_head}));
        ix.bk.push_back(put(prefix + ".msa.bk" + hs, {1, d_head}));
        ix.wv.push_back(put(prefix + ".msa.wv" + hs, {d, d_head}));
        ix.bv.push_back(put(prefix + ".msa.bv" + hs, {1, d_head}));
    }
    ix.wo = put(prefix + ".msa.wo", {heads * d_head, d});
    ix.bo = put(prefix + ".msa.bo", {1, d});
    ix.ln2_g = put(prefix + ".ln2.gamma", {1, d});
    ix.ln2_b = put(prefix + ".ln2.beta", {1, d});
    ix.w1 = put(prefix + ".mlp.w1", {d, mlp_dim});
    ix.b1 = put(prefix + ".mlp.b1", {1, mlp_dim});
    ix.w2 = put(prefix + ".mlp.w2", {mlp_dim, d});
    ix.b2 = put(prefix + ".mlp.b2", {1, d});
    return ix;
}

}  // namespace detail

inline void validate_config(const ModelConfig& cfg) {
    if (cfg.views.empty()) throw ConfigError("model needs at least one view");
    if (cfg.d == 0) throw ConfigError("token dimension d must be positive");
    if (cfg.view_heads == 0 || cfg.global_heads == 0)
        throw ConfigError("head counts must be positive");
    if (cfg.view_heads > cfg.d || cfg.global_heads > cfg.d)
        throw ConfigError("more heads than token dimensions");
    if (cfg.mlp_dim == 0) throw ConfigError("mlp_dim must be positive");
    if (cfg.classes < 2) throw ConfigError("need at least two classes");
    if (cfg.labels.size() != cfg.classes)
        throw ConfigError("expected " + std::to_string(cfg.classes) + " label names, got " +
                          std::to_string(cfg.labels.size()));
    if (cfg.stochastic_depth < 0.0 || cfg.stochastic_depth >= 1.0)
        throw ConfigError("stochastic_depth must lie in [0, 1)");
    for (std::size_t l : cfg.fusion_after())
        if (l == 0 || l > cfg.view_layers)
            throw ConfigError("fusion layer index " + std::to_string(l) +
                              " outside 1.." + std::to_string(cfg.view_layers));
    for (const TubeletSpec& v : cfg.views)
        token_count(cfg.geometry, ViewConfig{v.t, v.h, v.w, cfg.d});  // throws if too large
}

// Builds and validates the complete layout; this is where the shape ledger is
// asserted for any configuration.
inline ModelLayout build_layout(const ModelConfig& cfg) {
    validate_config(cfg);
    ModelLayout lay;
    lay.cfg = cfg;
    lay.fusion_after = cfg.fusion_after();
    std::sort(lay.fusion_after.begin(), lay.fusion_after.end());

    // Canonical ascending-token order, stable on ties.
    std::vector<std::size_t> order(cfg.views.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::size_t> counts(cfg.views.size());
    for (std::size_t i = 0; i < cfg.views.size(); ++i) {
        const TubeletSpec& v = cfg.views[i];
        counts[i] = token_count(cfg.geometry, ViewConfig{v.t, v.h, v.w, cfg.d});
    }
    std::stable_sort(order.begin(), order.end(),
                     [&counts](std::size_t a, std::size_t b) { return counts[a] < counts[b]; });

    auto put = [&lay](std::string name, Shape shape) {
        lay.params.push_back({std::move(name), std::move(shape)});
        return lay.params.size() - 1;
    };

    const std::size_t d = cfg.d;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const std::size_t src = order[rank];
        const TubeletSpec& spec = cfg.views[src];
        ViewIdx vi;
        vi.spec = spec;
        vi.original_index = src;
        vi.tokens = counts[src];
        const std::string vp = "view" + std::to_string(rank);
        const std::size_t patch = spec.t * spec.h * spec.w * cfg.geometry.channels;
        vi.proj = put(vp + ".embed.proj", {patch, d});
        vi.bias = put(vp + ".embed.bias", {1, d});
        vi.pos = put(vp + ".embed.pos", {vi.tokens, d});
        for (std::size_t l = 0; l < cfg.view_layers; ++l)
            vi.layers.push_back(detail::build_layer(lay.params, vp + ".layer" + std::to_string(l),
                                                    d, cfg.view_heads, cfg.mlp_dim));
        vi.pool_ws = put(vp + ".pool.ws", {d, 1});
        vi.gather_map = tubelet_gather_map(cfg.geometry, ViewConfig{spec.t, spec.h, spec.w, d});
        lay.views.push_back(std::move(vi));
    }

    for (std::size_t r = 0; r < lay.fusion_after.size(); ++r) {
        std::vector<PairIdx> round;
        for (std::size_t i = 0; i + 1 < lay.views.size(); ++i) {
            const std::string fp = "fusion" + std::to_string(r) + ".pair" + std::to_string(i);
            PairIdx px;
            px.wproj = put(fp + ".wproj", {d, d});
            px.wq = put(fp + ".wq", {d, d});
            px.wk = put(fp + ".wk", {d, d});
            px.wv = put(fp + ".wv", {d, d});
            round.push_back(px);
        }
        lay.fusion.push_back(std::move(round));
    }

    lay.global_viewpos = put("global.viewpos", {cfg.views.size(), d});
    for (std::size_t l = 0; l < cfg.global_layers; ++l)
        lay.global_layers.push_back(detail::build_layer(
            lay.params, "global.layer" + std::to_string(l), d, cfg.global_heads, cfg.mlp_dim));
    lay.global_pool_ws = put("global.pool.ws", {d, 1});
    lay.head_w = put("head.w", {d, cfg.classes});
    lay.head_b = put("head.b", {1, cfg.classes});

    for (const ViewIdx& v : lay.views) lay.ledger.tokens_per_view.push_back(v.tokens);
    lay.ledger.global_len = lay.views.size();
    lay.ledger.logits = cfg.classes;
    lay.ledger.param_count = 0;
    for (const ParamInfo& p : lay.params) lay.ledger.param_count += shape_numel(p.shape);
    return lay;
}

// Closed-form parameter count; build_layout's per-tensor sum must agree.
inline std::size_t count_params(const ModelConfig& cfg) {
    validate_config(cfg);
    const std::size_t d = cfg.d;
    auto layer_count = [&](std::size_t heads) {
        const std::size_t dh = d / heads;
        std::size_t c = 0;
        c += 2 * d + 2 * d;                       // two LN pairs
        c += heads * 3 * (d * dh + dh);           // per-head qkv weights+biases
        c += heads * dh * d + d;                  // output projection
        c += d * cfg.mlp_dim + cfg.mlp_dim;       // mlp in
        c += cfg.mlp_dim * d + d;                 // mlp out
        return c;
    };
    std::size_t total = 0;
    for (const TubeletSpec& v : cfg.views) {
        const std::size_t patch = v.t * v.h * v.w * cfg.geometry.channels;
        const std::size_t n = token_count(cfg.geometry, ViewConfig{v.t, v.h, v.w, d});
        total += patch * d + d + n * d;           // embedder
        total += cfg.view_layers * layer_count(cfg.view_heads);
        total += d;                               // pool ws
    }
    const std::size_t pairs = cfg.views.size() - 1;
    total += cfg.fusion_after().size() * pairs * 4 * d * d;
    total += cfg.views.size() * d;                // global view-position embedding
    total += cfg.global_layers * layer_count(cfg.global_heads);
    total += d;                                   // global pool ws
    total += d * cfg.classes + cfg.classes;       // head
    return total;
}

// Named parameter tensors in layout order.
template <typename S>
struct ParamSet {
    std::vector<Tensor<S>> values;

    const Tensor<S>& at(const ModelLayout& lay, const std::string& name) const {
        for (std::size_t i = 0; i < lay.params.size(); ++i)
            if (lay.params[i].name == name) return values[i];
        throw Error("unknown parameter: " + name);
    }
};

// Initialization: matrices get fan-in scaled uniform values U(-a, a) with
// a = 1/sqrt(rows); positional embeddings are Gaussian(0, 0.02); biases start
// at zero and layer-norm gains at one. Each tensor draws from its own child
// stream keyed by layout position, all derived from the init stream of the
// run seed.
template <typename S>
ParamSet<S> init_params(const ModelLayout& lay, std::uint64_t seed) {
    ParamSet<S> ps;
    ps.values.reserve(lay.params.size());
    const Rng root = Rng(seed).derive(stream::kInit);
    for (std::size_t i = 0; i < lay.params.size(); ++i) {
        const ParamInfo& info = lay.params[i];
        Rng r = root.derive(i);
        const std::string& n = info.name;
        const bool is_pos = n.find(".pos") != std::string::npos || n == "global.viewpos";
        const bool is_gamma = n.find(".gamma") != std::string::npos;
        const bool is_bias = n.find(".beta") != std::string::npos ||
                             n.find(".bias") != std::string::npos ||
                             n.find(".b1") != std::string::npos ||
                             n.find(".b2") != std::string::npos ||
                             n.find(".bo") != std::string::npos ||
                             n.find(".bq") != std::string::npos ||
                             n.find(".bk") != std::string::npos ||
                             n.find(".bv") != std::string::npos || n == "head.b";
        if (is_pos) {
            ps.values.push_back(r.gaussian_tensor<S>(info.shape, 0.0, 0.02));
        } else if (is_gamma) {
            Tensor<S> t(info.shape);
            t.fill(S(1));
            ps.values.push_back(std::move(t));
        } else if (is_bias) {
            ps.values.push_back(Tensor<S>(info.shape));
        } else {
            const double a = 1.0 / std::sqrt(static_cast<double>(info.shape.front()));
            ps.values.push_back(r.uniform_tensor<S>(info.shape, -a, a));
        }
    }
    return ps;
}

// Leaves every parameter into the graph, in layout order.
template <typename S>
std::vector<Value> bind_params(Graph<S>& g, const ParamSet<S>& ps, bool requires_grad) {
    std::vector<Value> vals;
    vals.reserve(ps.values.size());
    for (const Tensor<S>& t : ps.values) vals.push_back(g.leaf(t, requires_grad));
    return vals;
}

inline EncoderLayerValues layer_values(const std::vector<Value>& pv, const LayerIdx& ix,
                                       double drop_prob) {
    EncoderLayerValues lv;
    lv.ln1_gamma = pv[ix.ln1_g];
    lv.ln1_beta = pv[ix.ln1_b];
    for (std::size_t h = 0; h < ix.wq.size(); ++h) {
        lv.att.wq.push_back(pv[ix.wq[h]]);
        lv.att.bq.push_back(pv[ix.bq[h]]);
        lv.att.wk.push_back(pv[ix.wk[h]]);
        lv.att.bk.push_back(pv[ix.bk[h]]);
        lv.att.wv.push_back(pv[ix.wv[h]]);
        lv.att.bv.push_back(pv[ix.bv[h]]);
    }
    lv.att.wo = pv[ix.wo];
    lv.att.bo = pv[ix.bo];
    lv.ln2_gamma = pv[ix.ln2_g];
    lv.ln2_beta = pv[ix.ln2_b];
    lv.mlp_w1 = pv[ix.w1];
    lv.mlp_b1 = pv[ix.b1];
    lv.mlp_w2 = pv[ix.w2];
    lv.mlp_b2 = pv[ix.b2];
    lv.drop_prob = drop_prob;
    return lv;
}

struct ForwardResult {
    Value logits;                          // 1 x C
    std::vector<Value> view_pool_weights;  // each 1 x N_v
    Value global_pool_weights;             // 1 x V
};

// End-to-end forward pass: per-view tokenization, interleaved encoder layers
// and fusion rounds, per-view sequence pooling, global encoder over the view
// representations (plus learnable view-position embeddings), global pooling,
// linear head.
template <typename S>
ForwardResult forward_model(Graph<S>& g, const ModelLayout& lay, const std::vector<Value>& pv,
                            const Tensor<S>& clip, const Rng& rng, bool training) {
    const ModelConfig& cfg = lay.cfg;
    if (clip.shape() != cfg.geometry.shape())
        throw GeometryError("clip shape " + shape_str(clip.shape()) +
                            " does not match configured geometry " +
                            shape_str(cfg.geometry.shape()));
    Value clipv = g.constant(clip);

    std::vector<ViewSpec<S>> specs;
    for (const ViewIdx& v : lay.views)
        specs.push_back(ViewSpec<S>{ViewConfig{v.spec.t, v.spec.h, v.spec.w, cfg.d},
                                    EmbedderValues{pv[v.proj], pv[v.bias], pv[v.pos]},
                                    v.original_index, v.gather_map});
    std::vector<TokenSequence> seqs = make_views(g, clipv, cfg.geometry, specs);

    const Rng drop_rng = rng.derive(stream::kDrop);
    std::size_t round = 0;
    for (std::size_t l = 0; l < cfg.view_layers; ++l) {
        for (std::size_t v = 0; v < seqs.size(); ++v) {
            const double dp = drop_rate_for_layer(l, cfg.view_layers, cfg.stochastic_depth);
            seqs[v].tokens = encoder_layer(g, seqs[v].tokens,
                                           layer_values(pv, lay.views[v].layers[l], dp),
                                           drop_rng.derive(v * 1024 + l), training);
        }
        if (round < lay.fusion_after.size() && lay.fusion_after[round] == l + 1) {
            std::vector<CvafValues> cv;
            for (const PairIdx& px : lay.fusion[round])
                cv.push_back(CvafValues{pv[px.wproj], pv[px.wq], pv[px.wk], pv[px.wv]});
            seqs = fuse_all(g, seqs, cv);
            ++round;
        }
    }

    ForwardResult res;
    std::vector<Value> reps;
    for (std::size_t v = 0; v < seqs.size(); ++v) {
        Value weights;
        reps.push_back(sequence_pool(g, seqs[v].tokens, pv[lay.views[v].pool_ws], &weights));
        res.view_pool_weights.push_back(weights);
    }
    Value gseq = reps.size() == 1 ? reps[0] : g.concat_rows(reps);
    gseq = g.add(gseq, pv[lay.global_viewpos]);
    for (std::size_t l = 0; l < lay.global_layers.size(); ++l)
        gseq = encoder_layer(g, gseq, layer_values(pv, lay.global_layers[l], 0.0),
                             drop_rng.derive((std::size_t{1} << 40) + l), training);
    Value rep = sequence_pool(g, gseq, pv[lay.global_pool_ws], &res.global_pool_weights);
    res.logits = g.add_row(g.matmul(rep, pv[lay.head_w]), pv[lay.head_b]);
    return res;
}

struct Prediction {
    std::size_t cls = 0;
    std::vector<double> probs;
};

// Softmax over the logits; argmax ties resolve to the lowest class index.
inline Prediction prediction_from_logits(const std::vector<double>& logits) {
    Prediction p;
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0;
    p.probs.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p.probs[i] = std::exp(logits[i] - mx);
        sum += p.probs[i];
    }
    for (double& v : p.probs) v /= sum;
    p.cls = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[p.cls]) p.cls = i;
    return p;
}

template <typename S>
Prediction predict(const ModelLayout& lay, const ParamSet<S>& ps, const Tensor<S>& clip) {
    Graph<S> g;
    std::vector<Value> pv = bind_params(g, ps, false);
    ForwardResult fr = forward_model(g, lay, pv, clip, Rng(0), false);
    const Tensor<S>& lg = g.val(fr.logits);
    std::vector<double> logits(lg.numel());
    for (std::size_t i = 0; i < lg.numel(); ++i) logits[i] = static_cast<double>(lg[i]);
    return prediction_from_logits(logits);
}

}  // namespace engageformer
