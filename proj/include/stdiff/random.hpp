#ifndef STDIFF_RANDOM_HPP
#define STDIFF_RANDOM_HPP

#include "stdiff/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace stdiff {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

// Deterministic stream of draws. Uniform and normal variates are generated
// with fully specified arithmetic on top of mt19937_64 so that two runs with
// the same seed produce identical bits.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform on [0, 1); values are multiples of 2^-53.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1]; never zero, safe under log().
    double uniform_open() { return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53; }

    // Standard normal via Box-Muller; one fresh pair of uniforms per draw.
    double normal() {
        const double u1 = uniform_open();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Uniform integer in [lo, hi] inclusive, rejection-sampled (unbiased).
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
        const std::uint64_t span = hi - lo + 1;
        if (span == 0) return gen_();  // full range
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / span * span;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return lo + x % span;
    }

    template <typename Scalar>
    Tensor<Scalar> normal_tensor(Shape s) {
        Tensor<Scalar> t(std::move(s));
        for (Eigen::Index i = 0; i < t.numel(); ++i) t.data[i] = static_cast<Scalar>(normal());
        return t;
    }

    template <typename Scalar>
    Tensor<Scalar> uniform_tensor(Shape s) {
        Tensor<Scalar> t(std::move(s));
        for (Eigen::Index i = 0; i < t.numel(); ++i) t.data[i] = static_cast<Scalar>(uniform());
        return t;
    }

private:
    std::mt19937_64 gen_;
};

// Root of all randomness in a run. Substreams are derived from (seed, name,
// indices); the same key always yields the same stream, distinct keys yield
// independent streams. Each concurrent worker must derive its own substream.
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    Rng stream(std::string_view name, std::uint64_t a = 0, std::uint64_t b = 0,
               std::uint64_t c = 0) const {
        using detail::splitmix64;
        std::uint64_t h = splitmix64(seed_ ^ detail::fnv1a64(name));
        h = splitmix64(h ^ (a * 0x9e3779b97f4a7c15ULL + 0x7f4a7c15ULL));
        h = splitmix64(h ^ (b * 0xc2b2ae3d27d4eb4fULL + 0x27d4eb4fULL));
        h = splitmix64(h ^ (c * 0x165667b19e3779f9ULL + 0x9e3779f9ULL));
        return Rng(h);
    }

private:
    std::uint64_t seed_;
};

}  // namespace stdiff

#endif
