#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "iovqa/errors.hpp"

namespace iovqa {

inline constexpr double kPi = 3.14159265358979323846;

/// 64-bit FNV-1a over a byte string. Used for per-item seed derivation and
/// as the (non-cryptographic) content hash in run manifests.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// SplitMix64: the fixed generator behind all synthetic randomness.
/// Chosen because its output is a pure function of a 64-bit state, so
/// per-item streams derived from hash(seed, item_id) are reproducible in
/// any order and on any platform.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0,1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    /// Uniform in (0,1]; safe as a log() argument.
    double uniform_open() {
        return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    }

    /// Unbiased-enough integer in [0,n) via the multiply-shift reduction.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw InvalidArgument("SplitMix64::below: n must be positive");
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next()) * n) >> 64);
    }

    /// Standard normal via Box-Muller (no cached spare, so the stream is a
    /// fixed two-draws-per-sample function of the state).
    double gaussian() {
        const double u1 = uniform_open();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    double gaussian(double mean, double sd) { return mean + sd * gaussian(); }

    /// Rejection-sampled normal restricted to [lo,hi].
    double truncated_gaussian(double mean, double sd, double lo, double hi) {
        if (!(lo < hi)) throw InvalidArgument("truncated_gaussian: lo must be < hi");
        for (;;) {
            const double x = gaussian(mean, sd);
            if (x >= lo && x <= hi) return x;
        }
    }

private:
    std::uint64_t state_;
};

/// Per-item seed: FNV-1a over the key bytes followed by the 8 seed bytes
/// (little-endian). Independent of generation order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view key) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto absorb = [&h](unsigned char c) {
        h ^= c;
        h *= 0x100000001b3ull;
    };
    for (unsigned char c : key) absorb(c);
    for (int i = 0; i < 8; ++i) absorb(static_cast<unsigned char>(seed >> (8 * i)));
    return h;
}

}  // namespace iovqa
