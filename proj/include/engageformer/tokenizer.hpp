#pragma once

#include <algorithm>
#include <memory>
#include <vector>

#include "engageformer/graph.hpp"

namespace engageformer {

struct ClipGeometry {
    std::size_t frames = 0, height = 0, width = 0, channels = 0;

    std::size_t numel() const { return frames * height * width * channels; }
    Shape shape() const { return {frames, height, width, channels}; }
};

// One tubelet size. Tokens share dimension d across all views.
struct ViewConfig {
    std::size_t t = 0, h = 0, w = 0;
    std::size_t d = 0;
};

// Number of whole tubelets: floor(T/t) * floor(H/h) * floor(W/w). Trailing
// frames/pixels that do not fill a tubelet are dropped.
inline std::size_t token_count(const ClipGeometry& geom, const ViewConfig& v) {
    if (v.t == 0 || v.h == 0 || v.w == 0)
        throw GeometryError("tubelet extents must be positive");
    if (v.t > geom.frames || v.h > geom.height || v.w > geom.width)
        throw GeometryError("clip " + shape_str(geom.shape()) +
                            " is smaller than one tubelet " + std::to_string(v.t) + "x" +
                            std::to_string(v.h) + "x" + std::to_string(v.w));
    return (geom.frames / v.t) * (geom.height / v.h) * (geom.width / v.w);
}

// Flat gather map laying each tubelet out as one row of length t*h*w*C.
// Tubelets are enumerated in (time, height, width) lexicographic order and the
// elements inside a tubelet keep the clip's (t, h, w, c) row-major order, so
// the strided projection is a gather followed by one matmul.
inline std::shared_ptr<const std::vector<std::size_t>> tubelet_gather_map(
    const ClipGeometry& geom, const ViewConfig& v) {
    const std::size_t nt = geom.frames / v.t;
    const std::size_t nh = geom.height / v.h;
    const std::size_t nw = geom.width / v.w;
    const std::size_t C = geom.channels;
    auto idx = std::make_shared<std::vector<std::size_t>>();
    idx->reserve(nt * nh * nw * v.t * v.h * v.w * C);
    for (std::size_t bt = 0; bt < nt; ++bt)
        for (std::size_t bh = 0; bh < nh; ++bh)
            for (std::size_t bw = 0; bw < nw; ++bw)
                for (std::size_t dt = 0; dt < v.t; ++dt)
                    for (std::size_t dh = 0; dh < v.h; ++dh)
                        for (std::size_t dw = 0; dw < v.w; ++dw) {
                            const std::size_t fr = bt * v.t + dt;
                            const std::size_t row = bh * v.h + dh;
                            const std::size_t col = bw * v.w + dw;
                            const std::size_t base =
                                ((fr * geom.height + row) * geom.width + col) * C;
                            for (std::size_t c = 0; c < C; ++c) idx->push_back(base + c);
                        }
    return idx;
}

// Token sequence of one view inside a graph.
struct TokenSequence {
    Value tokens;               // N x d
    std::size_t n = 0, d = 0;
    std::size_t view_index = 0; // position in the original view list
};

// Parameters of one view's tubelet embedder, already bound into a graph.
struct EmbedderValues {
    Value proj;  // (t*h*w*C) x d
    Value bias;  // 1 x d
    Value pos;   // N x d learnable positional embedding
};

// token_i = E . vec(tubelet_i) + bias + P_i
template <typename S>
TokenSequence tubelet_tokenize(Graph<S>& g, Value clip, const ClipGeometry& geom,
                               const ViewConfig& v, const EmbedderValues& emb,
                               std::size_t view_index = 0,
                               std::shared_ptr<const std::vector<std::size_t>> map = nullptr) {
    const std::size_t n = token_count(geom, v);
    const std::size_t patch = v.t * v.h * v.w * geom.channels;
    if (g.val(clip).numel() != geom.numel())
        throw GeometryError("clip has " + std::to_string(g.val(clip).numel()) +
                            " elements, geometry " + shape_str(geom.shape()) + " expects " +
                            std::to_string(geom.numel()));
    if (g.val(emb.proj).rows() != patch || g.val(emb.proj).cols() != v.d)
        throw ShapeError("embedder projection " + shape_str(g.val(emb.proj).shape()) +
                         " does not match tubelet " + std::to_string(patch) + "x" +
                         std::to_string(v.d));
    if (g.val(emb.pos).rows() != n)
        throw ShapeError("positional embedding has " + std::to_string(g.val(emb.pos).rows()) +
                         " rows, view produces " + std::to_string(n) + " tokens");
    if (!map) map = tubelet_gather_map(geom, v);
    Value x = g.gather_flat(clip, std::move(map), n, patch);
    Value tok = g.add(g.add_row(g.matmul(x, emb.proj), emb.bias), emb.pos);
    return TokenSequence{tok, n, v.d, view_index};
}

template <typename S>
struct ViewSpec {
    ViewConfig cfg;
    EmbedderValues emb;
    std::size_t original_index = 0;
    std::shared_ptr<const std::vector<std::size_t>> map;  // optional cached gather map
};

// Tokenizes every view and returns the sequences sorted by ascending token
// count. Ties keep the original list order; view_index records where each
// sequence came from.
template <typename S>
std::vector<TokenSequence> make_views(Graph<S>& g, Value clip, const ClipGeometry& geom,
                                      const std::vector<ViewSpec<S>>& specs) {
    if (specs.empty()) throw ConfigError("make_views requires at least one view");
    const std::size_t d = specs.front().cfg.d;
    for (const auto& s : specs)
        if (s.cfg.d != d)
            throw ConfigError("all views must share token dimension d: " + std::to_string(d) +
                              " vs " + std::to_string(s.cfg.d));
    std::vector<TokenSequence> seqs;
    seqs.reserve(specs.size());
    for (const auto& s : specs)
        seqs.push_back(tubelet_tokenize(g, clip, geom, s.cfg, s.emb, s.original_index, s.map));
    std::stable_sort(seqs.begin(), seqs.end(),
                     [](const TokenSequence& a, const TokenSequence& b) { return a.n < b.n; });
    return seqs;
}

}  // namespace engageformer
