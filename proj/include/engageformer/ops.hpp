#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "engageformer/tensor.hpp"

namespace engageformer {

// Dense kernels on plain tensors. Each differentiable operation comes as a
// forward kernel plus the matching backward kernel(s); the autodiff graph in
// graph.hpp pairs them up. Kernels never broadcast except where the signature
// says so (bias rows, scalars).

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor<S> c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        S* crow = c.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const S av = a(i, p);
            if (av == S(0)) continue;
            const S* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// a^T * b without materializing the transpose.
template <typename S>
Tensor<S> matmul_tn(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows())
        throw ShapeError("matmul_tn shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
    Tensor<S> c({m, n});
    for (std::size_t p = 0; p < k; ++p) {
        const S* arow = a.data() + p * m;
        const S* brow = b.data() + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const S av = arow[i];
            if (av == S(0)) continue;
            S* crow = c.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// a * b^T without materializing the transpose.
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
        throw ShapeError("matmul_nt shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor<S> c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const S* arow = a.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const S* brow = b.data() + j * k;
            S acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c(i, j) = acc;
        }
    }
    return c;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
    const std::size_t m = a.rows(), n = a.cols();
    Tensor<S> t({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t(j, i) = a(i, j);
    return t;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b))
        throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor<S> c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) c[i] += b[i];
    return c;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S s) {
    Tensor<S> c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) c[i] *= s;
    return c;
}

// m (N x d) + row (d or 1 x d), broadcast over rows.
template <typename S>
Tensor<S> add_row(const Tensor<S>& m, const Tensor<S>& row) {
    const std::size_t n = m.rows(), d = m.cols();
    if (row.numel() != d)
        throw ShapeError("add_row shape mismatch: " + shape_str(m.shape()) + " + " +
                         shape_str(row.shape()));
    Tensor<S> c = m;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) c(i, j) += row[j];
    return c;
}

template <typename S>
Tensor<S> col_sums(const Tensor<S>& m) {
    Tensor<S> s({1, m.cols()});
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) s[j] += m(i, j);
    return s;
}

// Row-wise softmax with max subtraction. Rejects non-finite input.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
    const std::size_t n = x.rows(), d = x.cols();
    Tensor<S> y({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const S* xr = x.data() + i * d;
        S* yr = y.data() + i * d;
        S mx = xr[0];
        for (std::size_t j = 0; j < d; ++j) {
            if (!std::isfinite(static_cast<double>(xr[j])))
                throw NumericError("softmax input is not finite at row " + std::to_string(i));
            mx = std::max(mx, xr[j]);
        }
        S sum = 0;
        for (std::size_t j = 0; j < d; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (std::size_t j = 0; j < d; ++j) yr[j] /= sum;
    }
    return y;
}

// d/dx of softmax given its output y and upstream gradient g:
// dx = y .* (g - rowdot(g, y)).
template <typename S>
Tensor<S> softmax_rows_backward(const Tensor<S>& y, const Tensor<S>& g) {
    const std::size_t n = y.rows(), d = y.cols();
    Tensor<S> dx({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const S* yr = y.data() + i * d;
        const S* gr = g.data() + i * d;
        S dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
        S* dr = dx.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dr[j] = yr[j] * (gr[j] - dot);
    }
    return dx;
}

template <typename S>
struct LayerNormCache {
    Tensor<S> xhat;              // normalized pre-affine activations
    std::vector<S> inv_std;      // per row
};

// Per-row layer norm: (x - mean) / sqrt(var + eps), then gamma .* xhat + beta.
// Variance is the population variance over the feature axis.
template <typename S>
Tensor<S> layer_norm_rows(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                          S eps, LayerNormCache<S>* cache = nullptr) {
    const std::size_t n = x.rows(), d = x.cols();
    if (gamma.numel() != d || beta.numel() != d)
        throw ShapeError("layer_norm parameter shape mismatch: x " + shape_str(x.shape()) +
                         ", gamma " + shape_str(gamma.shape()) + ", beta " +
                         shape_str(beta.shape()));
    Tensor<S> y({n, d});
    if (cache) {
        cache->xhat = Tensor<S>({n, d});
        cache->inv_std.assign(n, S(0));
    }
    for (std::size_t i = 0; i < n; ++i) {
        const S* xr = x.data() + i * d;
        S mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<S>(d);
        S var = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const S c = xr[j] - mean;
            var += c * c;
        }
        var /= static_cast<S>(d);
        const S inv = S(1) / std::sqrt(var + eps);
        S* yr = y.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            const S xh = (xr[j] - mean) * inv;
            yr[j] = gamma[j] * xh + beta[j];
            if (cache) cache->xhat(i, j) = xh;
        }
        if (cache) cache->inv_std[i] = inv;
    }
    return y;
}

// Backward of layer_norm_rows. Writes dgamma/dbeta as 1 x d row tensors.
template <typename S>
Tensor<S> layer_norm_rows_backward(const LayerNormCache<S>& cache, const Tensor<S>& gamma,
                                   const Tensor<S>& g, Tensor<S>* dgamma, Tensor<S>* dbeta) {
    const std::size_t n = cache.xhat.rows(), d = cache.xhat.cols();
    Tensor<S> dx({n, d});
    if (dgamma) *dgamma = Tensor<S>({1, d});
    if (dbeta) *dbeta = Tensor<S>({1, d});
    for (std::size_t i = 0; i < n; ++i) {
        const S* xh = cache.xhat.data() + i * d;
        const S* gr = g.data() + i * d;
        S sum_gg = 0, sum_ggx = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const S gg = gr[j] * gamma[j];
            sum_gg += gg;
            sum_ggx += gg * xh[j];
        }
        const S inv = cache.inv_std[i];
        const S invd = S(1) / static_cast<S>(d);
        S* dr = dx.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            const S gg = gr[j] * gamma[j];
            dr[j] = (gg - sum_gg * invd - xh[j] * sum_ggx * invd) * inv;
            if (dgamma) (*dgamma)[j] += gr[j] * xh[j];
            if (dbeta) (*dbeta)[j] += gr[j];
        }
    }
    return dx;
}

inline double normal_cdf(double x) {
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
}

inline double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

// Exact GeLU: x * Phi(x) with the Gaussian CDF (erf form, not the tanh fit).
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    Tensor<S> y = x;
    for (std::size_t i = 0; i < y.numel(); ++i) {
        const double v = static_cast<double>(x[i]);
        y[i] = static_cast<S>(v * normal_cdf(v));
    }
    return y;
}

template <typename S>
Tensor<S> gelu_backward(const Tensor<S>& x, const Tensor<S>& g) {
    Tensor<S> dx = x;
    for (std::size_t i = 0; i < dx.numel(); ++i) {
        const double v = static_cast<double>(x[i]);
        dx[i] = g[i] * static_cast<S>(normal_cdf(v) + v * normal_pdf(v));
    }
    return dx;
}

}  // namespace engageformer
