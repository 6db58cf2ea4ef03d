#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace acnet {

/// Counter-based generator: output i is a pure function of (key, i), so
/// streams are reproducible independent of platform and of how other
/// streams are consumed. split() derives an independent child key.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 42) : key_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

    Rng split(std::uint64_t stream) const { return Rng(key_, mix(key_ + 0x632be59bd9b4e019ULL * (stream + 1))); }

    Rng split(std::string_view label) const {
        std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
        for (char c : label) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return split(h);
    }

    std::uint64_t next_u64() { return mix(key_ ^ mix(counter_++ * 0xd1b54a32d192ed03ULL + 1)); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (no cached second variate, so draws stay counter-aligned).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    std::uint64_t key() const { return key_; }

private:
    Rng(std::uint64_t, std::uint64_t key) : key_(key) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace acnet
