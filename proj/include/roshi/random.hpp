#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include <Eigen/Core>

namespace roshi {

/// Counter-free seed derivation: one master seed fans out into independent
/// per-module seeds keyed by a string tag, so adding a pipeline stage never
/// perturbs the randomness of earlier stages.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
    // FNV-1a over the tag, then a splitmix64 finalizer.
    std::uint64_t h = 14695981039346656037ull;
    for (char c : tag) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ull;
    }
    std::uint64_t z = master ^ h;
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Small deterministic RNG (xoshiro-style splitmix stream). We roll our own
/// normal sampler because std::normal_distribution is not bit-stable across
/// standard libraries, and the recording reproducibility contract is.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x6a09e667f3bcc909ull) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (deterministic across platforms).
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    Eigen::Vector3d gaussian3(double sigma) {
        return {sigma * gaussian(), sigma * gaussian(), sigma * gaussian()};
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace roshi
