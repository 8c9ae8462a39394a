#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "engageformer/tensor.hpp"

namespace engageformer {

// Seedable PRNG: a 64-bit seed is expanded by splitmix64 into the state of a
// xoshiro256** generator. Integer output is bit-identical across platforms.
//
// Stream derivation rule: derive(tag) builds a child generator whose seed is
//   splitmix64_mix(parent_seed ^ (tag + 1) * 0x9E3779B97F4A7C15)
// so child streams depend only on the parent's construction seed and the tag,
// never on how many values the parent has already drawn. Nested tags give a
// deterministic tree of independent streams.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
        std::uint64_t x = seed;
        for (auto& w : state_) w = splitmix64_next(x);
        have_spare_ = false;
        spare_ = 0.0;
    }

    std::uint64_t seed() const { return seed_; }

    Rng derive(std::uint64_t tag) const {
        return Rng(splitmix64_mix(seed_ ^ ((tag + 1) * UINT64_C(0x9E3779B97F4A7C15))));
    }

    // xoshiro256** next()
    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1): top 53 bits scaled by 2^-53.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in (0, 1]; used where log() must not see zero.
    double uniform_pos() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; the paired value is cached so each
    // draw consumes a deterministic number of generator words.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_pos();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename S>
    Tensor<S> uniform_tensor(Shape shape, double lo = 0.0, double hi = 1.0) {
        Tensor<S> t(std::move(shape));
        for (std::size_t i = 0; i < t.numel(); ++i)
            t[i] = static_cast<S>(lo + (hi - lo) * uniform());
        return t;
    }

    template <typename S>
    Tensor<S> gaussian_tensor(Shape shape, double mean = 0.0, double stddev = 1.0) {
        Tensor<S> t(std::move(shape));
        for (std::size_t i = 0; i < t.numel(); ++i)
            t[i] = static_cast<S>(mean + stddev * gaussian());
        return t;
    }

    static std::uint64_t splitmix64_mix(std::uint64_t x) {
        std::uint64_t z = x + UINT64_C(0x9E3779B97F4A7C15);
        z = (z ^ (z >> 30)) * UINT64_C(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)) * UINT64_C(0x94D049BB133111EB);
        return z ^ (z >> 31);
    }

private:
    static std::uint64_t splitmix64_next(std::uint64_t& x) {
        x += UINT64_C(0x9E3779B97F4A7C15);
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * UINT64_C(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)) * UINT64_C(0x94D049BB133111EB);
        return z ^ (z >> 31);
    }

    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t seed_;
    std::uint64_t state_[4];
    bool have_spare_;
    double spare_;
};

// Top-level stream tags. Everything a run randomizes hangs off the run seed
// through these, so reordering work never shifts another stream.
namespace stream {
constexpr std::uint64_t kInit = 1;       // parameter initialization
constexpr std::uint64_t kShuffle = 2;    // per-epoch dataset order
constexpr std::uint64_t kSample = 3;     // per-(epoch,sample) parent stream
constexpr std::uint64_t kAugment = 4;    // child of kSample: augmentation
constexpr std::uint64_t kDrop = 5;       // child of kSample: stochastic depth
}  // namespace stream

}  // namespace engageformer
