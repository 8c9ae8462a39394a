#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "engageformer/checkpoint.hpp"
#include "engageformer/data.hpp"
#include "engageformer/model.hpp"
#include "engageformer/optimizer.hpp"

namespace engageformer {

// Shortest decimal string that parses back to the same double.
inline std::string format_double_shortest(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

enum class FlipAxis { kHeight, kWidth };

struct TrainConfig {
    double lr0 = 1e-4;
    double weight_decay = 1e-5;
    std::size_t epochs = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double label_smoothing = 0.1;
    double noise_sigma = 0.01;
    double flip_prob = 0.5;
    double noise_prob = 0.5;
    FlipAxis flip_axis = FlipAxis::kHeight;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
};

inline void validate_train_config(const TrainConfig& tc) {
    if (tc.lr0 <= 0.0) throw ConfigError("lr0 must be positive");
    if (tc.epochs == 0) throw ConfigError("epochs must be >= 1");
    if (tc.batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (tc.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (tc.beta1 < 0.0 || tc.beta1 >= 1.0 || tc.beta2 < 0.0 || tc.beta2 >= 1.0)
        throw ConfigError("Adam betas must lie in [0, 1)");
    if (tc.adam_eps <= 0.0) throw ConfigError("adam_eps must be positive");
    if (tc.label_smoothing < 0.0 || tc.label_smoothing >= 1.0)
        throw ConfigError("label_smoothing must lie in [0, 1)");
    if (tc.noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
    if (tc.flip_prob < 0.0 || tc.flip_prob > 1.0 || tc.noise_prob < 0.0 || tc.noise_prob > 1.0)
        throw ConfigError("augmentation probabilities must lie in [0, 1]");
}

// ---- smoothed cross entropy -------------------------------------------------

// Composite graph node: loss = -sum_c q_c log softmax(logits)_c with
// q = (1 - eps) * onehot(target) + eps / C. Stable log-sum-exp forward;
// backward is softmax(logits) - q. Uniform logits give ln C for any eps.
template <typename S>
Value smoothed_cross_entropy(Graph<S>& g, Value logits, std::size_t target, double eps) {
    const Tensor<S>& lg = g.val(logits);
    if (lg.rank() != 2 || lg.rows() != 1)
        throw ShapeError("loss expects 1 x C logits, got " + shape_str(lg.shape()));
    const std::size_t classes = lg.cols();
    if (target >= classes)
        throw DataError("target " + std::to_string(target) + " outside 0.." +
                        std::to_string(classes - 1));
    if (eps < 0.0 || eps >= 1.0) throw ConfigError("label smoothing must lie in [0, 1)");
    if (!lg.all_finite()) throw NumericError("non-finite logits entering the loss");

    double mx = static_cast<double>(lg[0]);
    for (std::size_t c = 1; c < classes; ++c)
        mx = std::max(mx, static_cast<double>(lg[c]));
    double sum = 0.0;
    auto probs = std::make_shared<std::vector<double>>(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        (*probs)[c] = std::exp(static_cast<double>(lg[c]) - mx);
        sum += (*probs)[c];
    }
    const double lse = mx + std::log(sum);
    double loss = lse;
    for (std::size_t c = 0; c < classes; ++c) {
        (*probs)[c] /= sum;
        const double q = eps / static_cast<double>(classes) + (c == target ? 1.0 - eps : 0.0);
        loss -= q * static_cast<double>(lg[c]);
    }
    // loss = lse - sum_c q_c l_c since sum_c q_c = 1.
    return g.add_node(Tensor<S>::scalar(static_cast<S>(loss)), {logits},
                      [logits, probs, target, eps, classes](Graph<S>& gr, const Tensor<S>& go) {
                          Tensor<S> dl({1, classes});
                          const double up = static_cast<double>(go[0]);
                          for (std::size_t c = 0; c < classes; ++c) {
                              const double q = eps / static_cast<double>(classes) +
                                               (c == target ? 1.0 - eps : 0.0);
                              dl[c] = static_cast<S>(up * ((*probs)[c] - q));
                          }
                          gr.accumulate(logits, std::move(dl));
                      });
}

// ---- augmentation -------------------------------------------------------

// Mirrors a T x H x W x D clip along the height or width axis.
template <typename S>
Tensor<S> flip_clip(const Tensor<S>& clip, FlipAxis axis) {
    if (clip.rank() != 4)
        throw ShapeError("flip expects a rank-4 clip, got " + shape_str(clip.shape()));
    const std::size_t T = clip.extent(0), H = clip.extent(1), W = clip.extent(2),
                      D = clip.extent(3);
    Tensor<S> out(clip.shape());
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const std::size_t sy = axis == FlipAxis::kHeight ? H - 1 - y : y;
                const std::size_t sx = axis == FlipAxis::kWidth ? W - 1 - x : x;
                const std::size_t dst = ((t * H + y) * W + x) * D;
                const std::size_t src = ((t * H + sy) * W + sx) * D;
                for (std::size_t c = 0; c < D; ++c) out[dst + c] = clip[src + c];
            }
    return out;
}

// Training-time augmentation of a normalized clip: an optional mirror flip,
// then optional additive Gaussian pixel noise, then a clamp back into [-1, 1].
// The flip and noise decisions are drawn before any noise values so the
// stream layout is fixed.
template <typename S>
Tensor<S> augment_clip(const Tensor<S>& clip, Rng& rng, const TrainConfig& tc) {
    const bool do_flip = rng.bernoulli(tc.flip_prob);
    const bool do_noise = rng.bernoulli(tc.noise_prob);
    Tensor<S> out = do_flip ? flip_clip(clip, tc.flip_axis) : clip;
    if (do_noise)
        for (std::size_t i = 0; i < out.numel(); ++i)
            out[i] = static_cast<S>(static_cast<double>(out[i]) + tc.noise_sigma * rng.gaussian());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = std::min(S(1), std::max(S(-1), out[i]));
    return out;
}

// ---- training loop ---------------------------------------------------------

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;      // mean over the epoch's samples
    double acc = 0.0;       // training-pass argmax accuracy
    double lr = 0.0;        // learning rate of the epoch's first optimizer step
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    std::string last_checkpoint;
};

inline std::string format_epoch_line(const EpochStats& s) {
    std::ostringstream os;
    os << "epoch=" << s.epoch << " loss=" << std::fixed << std::setprecision(6) << s.loss
       << " acc=" << std::setprecision(4) << s.acc << " lr=" << format_double_shortest(s.lr);
    return os.str();
}

// Deterministic training. Per epoch: a seeded shuffle fixes the batch order;
// each sample owns an RNG stream keyed by (epoch, dataset index), from which
// augmentation and stochastic-depth draws derive, so the same seed replays
// bit-identically. Gradients are averaged over the batch, the learning rate
// follows the cosine schedule over all steps, and AdamW applies the update.
// Each epoch appends one log line and writes epoch_<n>.efck under out_dir.
//
// `threads` parallelizes the per-sample passes inside a batch. Every sample's
// gradients land in a slot for its batch position and the reduction walks the
// slots in order, so any thread count reproduces the single-threaded bits.
template <typename S>
TrainResult train_model(const ModelLayout& lay, ParamSet<S>& params, const Manifest& manifest,
                        const TrainConfig& tc, const std::string& out_dir,
                        std::ostream* log = nullptr, std::size_t threads = 1) {
    validate_train_config(tc);
    if (manifest.entries.empty()) throw DataError("training manifest is empty");
    if (manifest.classes() != lay.cfg.classes)
        throw ConfigError("manifest has " + std::to_string(manifest.classes()) +
                          " classes, model expects " + std::to_string(lay.cfg.classes));
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (!std::filesystem::is_directory(out_dir))
        throw DataError("cannot create output directory: " + out_dir);

    const std::size_t n = manifest.entries.size();
    const std::size_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
    const std::size_t total_steps = tc.epochs * steps_per_epoch;

    AdamWConfig oc;
    oc.beta1 = tc.beta1;
    oc.beta2 = tc.beta2;
    oc.eps = tc.adam_eps;
    oc.weight_decay = tc.weight_decay;
    AdamW<S> opt(oc, params.values);

    const Rng run_rng(tc.seed);
    TrainResult result;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle = run_rng.derive(stream::kShuffle).derive(epoch);
        for (std::size_t i = n; i-- > 1;)
            std::swap(order[i], order[shuffle.next_u64() % (i + 1)]);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        double first_lr = 0.0;
        for (std::size_t b = 0; b < n; b += tc.batch_size) {
            const std::size_t bend = std::min(n, b + tc.batch_size);
            const std::size_t bs = bend - b;

            struct SampleSlot {
                std::vector<Tensor<S>> grads;
                double loss = 0.0;
                bool correct = false;
                std::exception_ptr error;
            };
            std::vector<SampleSlot> slots(bs);
            auto run_sample = [&](std::size_t s) {
                const std::size_t idx = order[b + s];
                const ManifestEntry& entry = manifest.entries[idx];
                Tensor<S> clip = normalize_clip(read_clip<S>(manifest.resolve(entry)));
                Rng sample_rng = run_rng.derive(stream::kSample).derive(epoch * n + idx);
                Rng aug_rng = sample_rng.derive(stream::kAugment);
                clip = augment_clip(clip, aug_rng, tc);

                Graph<S> g;
                std::vector<Value> pv = bind_params(g, params, true);
                ForwardResult fr = forward_model(g, lay, pv, clip, sample_rng, true);
                Value loss = smoothed_cross_entropy(g, fr.logits, entry.label,
                                                    tc.label_smoothing);
                const double lv = static_cast<double>(g.val(loss)[0]);
                if (!std::isfinite(lv))
                    throw NumericError("loss is not finite at epoch " +
                                       std::to_string(epoch + 1) + " step " +
                                       std::to_string(step + 1) + " on " + entry.path);
                slots[s].loss = lv;
                const Tensor<S>& lg = g.val(fr.logits);
                std::size_t arg = 0;
                for (std::size_t c = 1; c < lg.numel(); ++c)
                    if (lg[c] > lg[arg]) arg = c;
                slots[s].correct = arg == entry.label;

                g.backward(loss);
                slots[s].grads.reserve(pv.size());
                for (Value v : pv) slots[s].grads.push_back(g.grad(v));
            };
            const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), bs);
            if (workers == 1) {
                for (std::size_t s = 0; s < bs; ++s) run_sample(s);
            } else {
                std::vector<std::thread> pool;
                for (std::size_t w = 0; w < workers; ++w)
                    pool.emplace_back([&, w] {
                        for (std::size_t s = w; s < bs; s += workers) {
                            try {
                                run_sample(s);
                            } catch (...) {
                                slots[s].error = std::current_exception();
                            }
                        }
                    });
                for (std::thread& t : pool) t.join();
            }

            std::vector<Tensor<S>> accum;
            accum.reserve(params.values.size());
            for (const Tensor<S>& p : params.values) accum.push_back(zeros_like(p));
            for (std::size_t s = 0; s < bs; ++s) {
                if (slots[s].error) std::rethrow_exception(slots[s].error);
                loss_sum += slots[s].loss;
                if (slots[s].correct) ++correct;
                for (std::size_t p = 0; p < accum.size(); ++p) {
                    const Tensor<S>& gp = slots[s].grads[p];
                    for (std::size_t j = 0; j < gp.numel(); ++j) accum[p][j] += gp[j];
                }
            }

            const S inv_b = static_cast<S>(1.0 / static_cast<double>(bs));
            for (Tensor<S>& a : accum)
                for (std::size_t j = 0; j < a.numel(); ++j) a[j] *= inv_b;
            const double lr = cosine_lr(step, total_steps, tc.lr0);
            if (b == 0) first_lr = lr;
            opt.step(params.values, accum, lr);
            ++step;
        }

        EpochStats stats;
        stats.epoch = epoch + 1;
        stats.loss = loss_sum / static_cast<double>(n);
        stats.acc = static_cast<double>(correct) / static_cast<double>(n);
        stats.lr = first_lr;
        result.epochs.push_back(stats);
        if (log) (*log) << format_epoch_line(stats) << "\n" << std::flush;

        result.last_checkpoint = out_dir + "/epoch_" + std::to_string(epoch + 1) + ".efck";
        save_checkpoint(result.last_checkpoint, lay, params);
    }
    return result;
}

// ---- finite-difference gradient check ----------------------------------------

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;  // one per parameter tensor, layout order
    double tolerance = 1e-4;
    double worst = 0.0;
    std::string worst_name;
    bool pass = false;
};

inline std::string format_gradcheck_report(const GradCheckReport& rep) {
    std::ostringstream os;
    for (const GradCheckEntry& e : rep.entries)
        os << (e.max_rel_err <= rep.tolerance ? "ok   " : "FAIL ") << std::scientific
           << std::setprecision(3) << e.max_rel_err << "  " << e.name << "\n";
    os << (rep.pass ? "PASS" : "FAIL") << " worst " << std::scientific << std::setprecision(3)
       << rep.worst << " (" << rep.worst_name << ") tolerance " << rep.tolerance << "\n";
    return os.str();
}

namespace detail {

inline double gradcheck_loss(const ModelLayout& lay, const ParamSet<double>& ps,
                             const Tensor<double>& clip, std::size_t target, double smooth) {
    Graph<double> g;
    std::vector<Value> pv = bind_params(g, ps, false);
    ForwardResult fr = forward_model(g, lay, pv, clip, Rng(0), false);
    Value loss = smoothed_cross_entropy(g, fr.logits, target, smooth);
    return static_cast<double>(g.val(loss)[0]);
}

}  // namespace detail

// Central-difference check of every parameter tensor against the analytic
// backward pass, in double precision with dropout off. The relative error of
// element j is |a_j - n_j| / max(1, |a_j|, |n_j|); the report carries the max
// per tensor, each parameter path exactly once, in layout order. `tamper` is
// a test hook that may corrupt the analytic gradients before comparison.
inline GradCheckReport gradcheck_model(
    const ModelConfig& cfg, std::uint64_t seed, std::size_t threads = 1,
    const std::function<void(const ModelLayout&, std::vector<Tensor<double>>&)>& tamper =
        nullptr) {
    const ModelLayout lay = build_layout(cfg);
    ParamSet<double> params = init_params<double>(lay, seed);

    Rng clip_rng = Rng(seed).derive(stream::kSample);
    const Tensor<double> clip = clip_rng.uniform_tensor<double>(cfg.geometry.shape(), -1.0, 1.0);
    const std::size_t target = static_cast<std::size_t>(seed % cfg.classes);
    const double smooth = 0.1;

    std::vector<Tensor<double>> analytic;
    {
        Graph<double> g;
        std::vector<Value> pv = bind_params(g, params, true);
        ForwardResult fr = forward_model(g, lay, pv, clip, Rng(0), false);
        Value loss = smoothed_cross_entropy(g, fr.logits, target, smooth);
        g.backward(loss);
        analytic.reserve(pv.size());
        for (Value v : pv) analytic.push_back(g.grad(v));
    }
    if (tamper) tamper(lay, analytic);

    GradCheckReport rep;
    rep.entries.resize(lay.params.size());
    const double h = 1e-5;
    if (threads == 0) threads = 1;
    threads = std::min(threads, lay.params.size());

    auto work = [&](std::size_t w) {
        ParamSet<double> local = params;  // private copy to perturb
        for (std::size_t i = w; i < lay.params.size(); i += threads) {
            GradCheckEntry entry;
            entry.name = lay.params[i].name;
            Tensor<double>& t = local.values[i];
            for (std::size_t j = 0; j < t.numel(); ++j) {
                const double saved = t[j];
                t[j] = saved + h;
                const double up = detail::gradcheck_loss(lay, local, clip, target, smooth);
                t[j] = saved - h;
                const double down = detail::gradcheck_loss(lay, local, clip, target, smooth);
                t[j] = saved;
                const double numeric = (up - down) / (2.0 * h);
                const double a = analytic[i][j];
                const double rel =
                    std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
                entry.max_rel_err = std::max(entry.max_rel_err, rel);
            }
            rep.entries[i] = std::move(entry);
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
        for (std::thread& t : pool) t.join();
    }

    rep.pass = true;
    for (const GradCheckEntry& e : rep.entries) {
        if (e.max_rel_err > rep.worst) {
            rep.worst = e.max_rel_err;
            rep.worst_name = e.name;
        }
        if (e.max_rel_err > rep.tolerance) rep.pass = false;
    }
    return rep;
}

}  // namespace engageformer
