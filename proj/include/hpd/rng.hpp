#ifndef HPD_RNG_HPP
#define HPD_RNG_HPP

#include <cmath>
#include <cstdint>

#include "hpd/tensor.hpp"

namespace hpd {

// SplitMix64 step; also used to derive independent substream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Stable substream seed for (seed, index); used for per-sample and
// per-parameter streams so outputs are order-independent.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t s = seed ^ (0x9E3779B97F4A7C15ull * (index + 1));
    return splitmix64(s);
}

inline std::uint64_t fnv1a64(const char* bytes, std::size_t len) {
    std::uint64_t h = 14695981039346656037ull;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= static_cast<unsigned char>(bytes[i]);
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// Deterministic xoshiro256++ generator, state seeded via SplitMix64.
// A fixed named algorithm (not the standard library's default engine) so
// identical seeds give bit-identical streams on every platform. Uniform
// scalars come from the high bits: doubles use 53 bits * 2^-53, floats
// 24 bits * 2^-24; both are exact dyadic values in [0, 1).
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    float next_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

    double uniform(double lo, double hi) {
        if (!(lo < hi)) throw ValueError("uniform: lo must be < hi");
        double v = lo + next_double() * (hi - lo);
        if (v >= hi) v = std::nextafter(hi, lo);
        return v;
    }

    float uniform(float lo, float hi) {
        if (!(lo < hi)) throw ValueError("uniform: lo must be < hi");
        float v = lo + next_float() * (hi - lo);
        if (v >= hi) v = std::nextafterf(hi, lo);
        return v;
    }

    // Marsaglia polar method; avoids trig so the stream depends only on
    // sqrt/log of exact dyadic uniforms.
    double normal(double mean, double sigma) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + sigma * spare_;
        }
        double u, v, q;
        do {
            u = 2.0 * next_double() - 1.0;
            v = 2.0 * next_double() - 1.0;
            q = u * u + v * v;
        } while (q >= 1.0 || q == 0.0);
        const double f = std::sqrt(-2.0 * std::log(q) / q);
        spare_ = v * f;
        has_spare_ = true;
        return mean + sigma * (u * f);
    }

    // Unbiased integer in [0, bound) by rejection.
    std::uint64_t next_below(std::uint64_t bound) {
        if (bound == 0) throw ValueError("next_below: bound must be > 0");
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Tensor filled with uniform draws in [lo, hi); same seed, same bits.
template <class T>
Tensor4<T> rng_uniform(Rng& rng, Shape4 shape, T lo, T hi) {
    if (!(lo < hi)) throw ValueError("rng_uniform: lo must be < hi");
    Tensor4<T> out(shape);
    for (T& v : out.vec()) v = rng.uniform(lo, hi);
    return out;
}

template <class Vec>
void shuffle(Vec& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace hpd

#endif  // HPD_RNG_HPP
