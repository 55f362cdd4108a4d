#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace crl {

// Error taxonomy used across the library. The CLI maps these onto its
// exit-code contract (usage/format -> 2, divergence -> 3).
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IngestError : std::runtime_error {
    explicit IngestError(const std::string& msg) : std::runtime_error(msg) {}
};

// (batch, channels, height, width)
struct Shape4 {
    int n = 0, c = 0, h = 0, w = 0;

    std::int64_t numel() const {
        return std::int64_t(n) * c * h * w;
    }
    bool operator==(const Shape4&) const = default;

    std::string str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" +
               std::to_string(h) + "x" + std::to_string(w);
    }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic RNG wrapper. Distributions are implemented by hand so the
// produced streams do not depend on the standard library in use.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_base_(seed), engine_(splitmix64(seed)) {}

    // Derive an independent stream, stable under call order.
    Rng stream(std::uint64_t salt) const {
        return Rng(splitmix64(seed_base_ ^ splitmix64(salt)));
    }

    std::uint64_t next_u64() { return engine_(); }

    double uniform() {  // [0, 1)
        return double(next_u64() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }
    // integer in [lo, hi] inclusive
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + std::int64_t(next_u64() % std::uint64_t(hi - lo + 1));
    }
    double normal(double mean = 0.0, double sigma = 1.0) {
        // Box-Muller, one value per call
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sigma * r * std::cos(6.283185307179586476925287 * u2);
    }

private:
    std::uint64_t seed_base_ = 0;
    std::mt19937_64 engine_;
};

// FNV-1a over raw bytes; used for parameter freeze checks.
inline std::uint64_t fnv1a(const void* data, std::size_t nbytes,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < nbytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace crl
