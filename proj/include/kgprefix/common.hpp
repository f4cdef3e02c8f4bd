// Shared utilities: error taxonomy, deterministic RNG, hashing.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kgprefix {

// ----------------------------- errors -----------------------------
// Every failure mode surfaces as a typed exception; the CLI maps each
// class to a distinct exit code.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };   // shape mismatch
struct IndexError : Error { using Error::Error; };       // out-of-range lookup
struct NumericError : Error { using Error::Error; };     // NaN/Inf or numeric failure
struct ParseError : Error { using Error::Error; };       // malformed file/config
struct ConfigError : Error { using Error::Error; };      // inconsistent configuration
struct DependencyError : Error { using Error::Error; };  // missing prerequisite stage
struct IoError : Error { using Error::Error; };          // filesystem failure
struct CapacityError : Error { using Error::Error; };    // generator template space exhausted
struct DecodeError : Error { using Error::Error; };      // beam search dead end

// ----------------------------- rng -----------------------------
// mt19937_64 core (bit-exact per the standard) with hand-rolled
// distributions so results do not depend on the standard library's
// unspecified distribution algorithms.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1) with 53-bit resolution
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller without caching the spare; two draws per call keeps the
    // stream position independent of call history.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double z = radius * std::cos(6.283185307179586 * u2);
        return mean + stddev * z;
    }

    // uniform index in [0, n) via rejection sampling (no modulo bias)
    size_t below(size_t n) {
        if (n == 0) throw IndexError("Rng::below: n must be positive");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x = 0;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<size_t>(x % n);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    template <class T>
    const T& pick(const std::vector<T>& v) {
        return v[below(v.size())];
    }

private:
    std::mt19937_64 engine_;
};

// ----------------------------- hashing -----------------------------
// FNV-1a 64-bit; used for config and checkpoint content hashes.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t seed = 0xcbf29ce484222325ULL) {
    return fnv1a(s.data(), s.size(), seed);
}

}  // namespace kgprefix
