#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace fdev {

// splitmix64 step, used for seed derivation.
inline uint64_t mix_seed(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    return mix_seed(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

// Deterministic RNG. Distribution shaping is done here rather than with
// std:: distributions, whose output differs between standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed), seed_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double log_uniform(double lo, double hi) {
        return std::exp(uniform(std::log(lo), std::log(hi)));
    }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        int k = static_cast<int>(uniform() * n);
        return k >= n ? n - 1 : k;
    }

    // Standard normal via Box-Muller (single value per call; no cached
    // second value, so the draw sequence is position-independent).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    // Independent substream keyed on (root seed, stream id).
    Rng fork(uint64_t stream) const {
        return Rng(hash_combine(seed_, stream));
    }

    uint64_t seed() const { return seed_; }

private:
    std::mt19937_64 gen_;
    uint64_t seed_;
};

}  // namespace fdev
