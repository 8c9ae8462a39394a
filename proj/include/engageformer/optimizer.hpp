#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "engageformer/tensor.hpp"

namespace engageformer {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
};

// Cosine decay without warmup: lr0 * 0.5 * (1 + cos(pi * step / total)).
// Floors at exactly zero when step == total_steps.
inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
    if (total_steps == 0) throw ConfigError("cosine schedule needs total_steps > 0");
    if (step > total_steps)
        throw ConfigError("cosine schedule step " + std::to_string(step) + " beyond total " +
                          std::to_string(total_steps));
    if (step == total_steps) return 0.0;
    const double x = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * x));
}

// AdamW with bias-corrected moments and decoupled weight decay applied after
// the Adam term: theta -= lr * m_hat / (sqrt(v_hat) + eps); theta -= lr * wd * theta.
template <typename S>
class AdamW {
public:
    AdamW(AdamWConfig cfg, const std::vector<Tensor<S>>& params) : cfg_(cfg) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const Tensor<S>& p : params) {
            m_.push_back(zeros_like(p));
            v_.push_back(zeros_like(p));
        }
    }

    std::uint64_t steps() const { return step_; }

    void step(std::vector<Tensor<S>>& params, const std::vector<Tensor<S>>& grads, double lr) {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor<S>& p = params[i];
            const Tensor<S>& g = grads[i];
            Tensor<S>& m = m_[i];
            Tensor<S>& v = v_[i];
            for (std::size_t j = 0; j < p.numel(); ++j) {
                const double gj = static_cast<double>(g[j]);
                const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
                const double vj =
                    cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
                m[j] = static_cast<S>(mj);
                v[j] = static_cast<S>(vj);
                const double m_hat = mj / bc1;
                const double v_hat = vj / bc2;
                double pj = static_cast<double>(p[j]);
                pj -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
                pj -= lr * cfg_.weight_decay * pj;
                p[j] = static_cast<S>(pj);
            }
        }
    }

private:
    AdamWConfig cfg_;
    std::vector<Tensor<S>> m_, v_;
    std::uint64_t step_ = 0;
};

}  // namespace engageformer
