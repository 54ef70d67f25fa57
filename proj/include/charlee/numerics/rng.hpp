#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "charlee/errors.hpp"

namespace charlee {

// Counter-based generator: draw i of a stream with key k is
//   splitmix64_finalize(k + (i + 1) * 0x9E3779B97F4A7C15)
// so the sequence depends only on (key, counter) and is identical on every
// platform. Named sub-streams get their key by hashing the parent key with
// the stream label (FNV-1a) and an optional index.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0) : key_(seed) {}

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Independent stream for one component, e.g. derive("shuffle", epoch).
    RngStream derive(std::string_view label, std::uint64_t index = 0) const noexcept {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (char c : label) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ULL;
        }
        return RngStream(mix(key_ ^ mix(h + mix(index + 0x632BE59BD9B4E019ULL))));
    }

    std::uint64_t next_u64() noexcept {
        ++counter_;
        return mix(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n) by rejection (no modulo bias).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw InputError("RngStream::below: empty range");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r;
        do {
            r = next_u64();
        } while (r >= limit);
        return r % n;
    }

    /// Standard normal via Box-Muller (one value per call, the sine branch is discarded).
    double normal() noexcept {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// Gamma(shape, 1) by Marsaglia-Tsang; shape < 1 uses the boost U^(1/shape).
    double gamma(double shape) {
        if (!(shape > 0.0)) throw DomainError("gamma shape must be positive");
        if (shape < 1.0) {
            double u = uniform();
            while (u <= 0.0) u = uniform();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace charlee
