#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "engageformer/ops.hpp"
#include "engageformer/tensor.hpp"

namespace engageformer {

// Handle to a node in a Graph. Plain index; cheap to copy into closures.
struct Value {
    static constexpr std::uint32_t kInvalid = 0xFFFFFFFFu;
    std::uint32_t id = kInvalid;
    bool valid() const { return id != kInvalid; }
};

// Reverse-mode tape. Every operation appends a node holding its forward
// result and a closure that maps the node's cotangent to cotangent
// contributions for its parents. Creation order is a topological order, so
// backward() is a single reverse sweep seeded at a scalar root.
//
// A graph is built per forward pass and discarded afterwards; tensors stored
// in nodes are immutable once set.
template <typename S>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, const Tensor<S>&)>;

    Value leaf(Tensor<S> v, bool requires_grad = false) {
        return push(std::move(v), requires_grad, nullptr);
    }

    Value constant(Tensor<S> v) { return leaf(std::move(v), false); }

    const Tensor<S>& val(Value v) const { return nodes_[v.id].value; }

    bool requires_grad(Value v) const { return nodes_[v.id].requires_grad; }

    // Gradient accumulated at v by the last backward(); zeros if untouched.
    const Tensor<S>& grad(Value v) {
        Tensor<S>& gr = grads_[v.id];
        if (gr.empty()) gr = zeros_like(nodes_[v.id].value);
        return gr;
    }

    void accumulate(Value v, Tensor<S> delta) {
        if (!nodes_[v.id].requires_grad) return;
        Tensor<S>& gr = grads_[v.id];
        if (gr.empty()) {
            gr = std::move(delta);
        } else {
            for (std::size_t i = 0; i < gr.numel(); ++i) gr[i] += delta[i];
        }
    }

    // Reverse sweep from a scalar root with cotangent 1.
    void backward(Value root) {
        if (val(root).numel() != 1)
            throw ShapeError("backward root must be scalar, got " +
                             shape_str(val(root).shape()));
        grads_[root.id] = Tensor<S>::scalar(S(1));
        for (std::uint32_t i = root.id + 1; i-- > 0;) {
            if (grads_[i].empty() || !nodes_[i].backward) continue;
            nodes_[i].backward(*this, grads_[i]);
        }
    }

    std::size_t size() const { return nodes_.size(); }

    // Extension point for composite ops (losses, custom kernels).
    Value add_node(Tensor<S> value, const std::vector<Value>& parents, BackwardFn fn) {
        bool req = false;
        for (Value p : parents) req = req || nodes_[p.id].requires_grad;
        return push(std::move(value), req, req ? std::move(fn) : nullptr);
    }

    // ---- differentiable operations -------------------------------------

    Value add(Value a, Value b) {
        Value out = add_node(engageformer::add(val(a), val(b)), {a, b},
                             [a, b](Graph& g, const Tensor<S>& go) {
                                 g.accumulate(a, go);
                                 g.accumulate(b, go);
                             });
        return out;
    }

    Value scale(Value a, S c) {
        return add_node(engageformer::scale(val(a), c), {a},
                        [a, c](Graph& g, const Tensor<S>& go) {
                            g.accumulate(a, engageformer::scale(go, c));
                        });
    }

    Value add_row(Value m, Value row) {
        const Shape row_shape = val(row).shape();
        return add_node(engageformer::add_row(val(m), val(row)), {m, row},
                        [m, row, row_shape](Graph& g, const Tensor<S>& go) {
                            g.accumulate(m, go);
                            Tensor<S> dr = col_sums(go);
                            g.accumulate(row, Tensor<S>(row_shape, std::move(dr.vec())));
                        });
    }

    Value matmul(Value a, Value b) {
        return add_node(engageformer::matmul(val(a), val(b)), {a, b},
                        [a, b](Graph& g, const Tensor<S>& go) {
                            g.accumulate(a, matmul_nt(go, g.val(b)));
                            g.accumulate(b, matmul_tn(g.val(a), go));
                        });
    }

    Value transpose(Value a) {
        return add_node(engageformer::transpose(val(a)), {a},
                        [a](Graph& g, const Tensor<S>& go) {
                            g.accumulate(a, engageformer::transpose(go));
                        });
    }

    Value softmax_rows(Value x) {
        Value out = push(engageformer::softmax_rows(val(x)), nodes_[x.id].requires_grad, nullptr);
        if (nodes_[out.id].requires_grad)
            nodes_[out.id].backward = [x, out](Graph& g, const Tensor<S>& go) {
                g.accumulate(x, softmax_rows_backward(g.val(out), go));
            };
        return out;
    }

    Value layer_norm(Value x, Value gamma, Value beta, S eps) {
        auto cache = std::make_shared<LayerNormCache<S>>();
        Tensor<S> y = layer_norm_rows(val(x), val(gamma), val(beta), eps, cache.get());
        return add_node(std::move(y), {x, gamma, beta},
                        [x, gamma, beta, cache](Graph& g, const Tensor<S>& go) {
                            Tensor<S> dgamma, dbeta;
                            Tensor<S> dx = layer_norm_rows_backward(*cache, g.val(gamma), go,
                                                                    &dgamma, &dbeta);
                            g.accumulate(x, std::move(dx));
                            const Shape gs = g.val(gamma).shape();
                            const Shape bs = g.val(beta).shape();
                            g.accumulate(gamma, Tensor<S>(gs, std::move(dgamma.vec())));
                            g.accumulate(beta, Tensor<S>(bs, std::move(dbeta.vec())));
                        });
    }

    Value gelu(Value x) {
        return add_node(engageformer::gelu(val(x)), {x},
                        [x](Graph& g, const Tensor<S>& go) {
                            g.accumulate(x, gelu_backward(g.val(x), go));
                        });
    }

    Value concat_cols(const std::vector<Value>& parts) {
        const std::size_t n = val(parts.front()).rows();
        std::size_t total = 0;
        for (Value p : parts) {
            if (val(p).rows() != n)
                throw ShapeError("concat_cols row mismatch: " + shape_str(val(p).shape()));
            total += val(p).cols();
        }
        Tensor<S> out({n, total});
        std::size_t off = 0;
        for (Value p : parts) {
            const Tensor<S>& t = val(p);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < t.cols(); ++j) out(i, off + j) = t(i, j);
            off += t.cols();
        }
        auto ps = parts;
        return add_node(std::move(out), parts, [ps, n](Graph& g, const Tensor<S>& go) {
            std::size_t off = 0;
            for (Value p : ps) {
                const std::size_t c = g.val(p).cols();
                Tensor<S> dp({n, c});
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) dp(i, j) = go(i, off + j);
                g.accumulate(p, std::move(dp));
                off += c;
            }
        });
    }

    Value concat_rows(const std::vector<Value>& parts) {
        const std::size_t d = val(parts.front()).cols();
        std::size_t total = 0;
        for (Value p : parts) {
            if (val(p).cols() != d)
                throw ShapeError("concat_rows column mismatch: " + shape_str(val(p).shape()));
            total += val(p).rows();
        }
        Tensor<S> out({total, d});
        std::size_t off = 0;
        for (Value p : parts) {
            const Tensor<S>& t = val(p);
            for (std::size_t i = 0; i < t.rows(); ++i)
                for (std::size_t j = 0; j < d; ++j) out(off + i, j) = t(i, j);
            off += t.rows();
        }
        auto ps = parts;
        return add_node(std::move(out), parts, [ps, d](Graph& g, const Tensor<S>& go) {
            std::size_t off = 0;
            for (Value p : ps) {
                const std::size_t r = g.val(p).rows();
                Tensor<S> dp({r, d});
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < d; ++j) dp(i, j) = go(off + i, j);
                g.accumulate(p, std::move(dp));
                off += r;
            }
        });
    }

    // Rearranges flat elements of src into a rows x cols matrix via a fixed
    // index map. The tokenizer uses this to lay each tubelet out as one row;
    // backward is a scatter-add into the source.
    Value gather_flat(Value src, std::shared_ptr<const std::vector<std::size_t>> idx,
                      std::size_t rows, std::size_t cols) {
        Tensor<S> out({rows, cols});
        const Tensor<S>& s = val(src);
        for (std::size_t i = 0; i < rows * cols; ++i) out[i] = s[(*idx)[i]];
        return add_node(std::move(out), {src},
                        [src, idx, rows, cols](Graph& g, const Tensor<S>& go) {
                            Tensor<S> ds = zeros_like(g.val(src));
                            for (std::size_t i = 0; i < rows * cols; ++i)
                                ds[(*idx)[i]] += go[i];
                            g.accumulate(src, std::move(ds));
                        });
    }

private:
    struct Node {
        Tensor<S> value;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Value push(Tensor<S> v, bool req, BackwardFn fn) {
        nodes_.push_back(Node{std::move(v), req, req ? std::move(fn) : nullptr});
        grads_.emplace_back();
        return Value{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    std::vector<Node> nodes_;
    std::vector<Tensor<S>> grads_;
};

}  // namespace engageformer
