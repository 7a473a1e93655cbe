#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace uniark {

// Deterministic RNG built on std::mt19937_64 (the engine is fully specified
// by the standard). All derived draws are implemented here instead of the
// standard <random> distributions, whose output is implementation-defined;
// this keeps every artifact byte-reproducible across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    // Uniform integer in [0, n) via rejection sampling (unbiased).
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_index: n must be > 0");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller (no cached spare; one value per call
    // keeps the draw sequence easy to reason about).
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Fisher-Yates; std::shuffle is implementation-defined, this is not.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// Samples ranks 1..n with P(rank j) proportional to j^-s. s == 0 is uniform.
class ZipfSampler {
public:
    ZipfSampler(std::size_t n, double exponent) {
        if (n == 0) throw std::invalid_argument("ZipfSampler: n must be > 0");
        cumulative_.resize(n);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            total += std::pow(static_cast<double>(j + 1), -exponent);
            cumulative_[j] = total;
        }
        for (auto& c : cumulative_) c /= total;
    }

    // Returns a 0-based index (rank - 1).
    std::size_t sample(Rng& rng) const {
        const double u = rng.uniform01();
        std::size_t lo = 0, hi = cumulative_.size() - 1;
        while (lo < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (cumulative_[mid] < u) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        return lo;
    }

    double probability(std::size_t index) const {
        return index == 0 ? cumulative_[0]
                          : cumulative_[index] - cumulative_[index - 1];
    }

    std::size_t size() const { return cumulative_.size(); }

private:
    std::vector<double> cumulative_;
};

// Stable 64-bit stream split: derive an independent seed from (seed, salt).
// splitmix64 finalizer, good avalanche, stable across platforms.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace uniark
