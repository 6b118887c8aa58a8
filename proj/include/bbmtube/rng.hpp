#pragma once

// Counter-based random numbers (Philox4x32-10).
//
// Every draw is a pure function of (key, counter), so a particle's stream is
// addressed by its identifier and the step index instead of by the order in
// which particles happen to be visited. This is what makes simulations with
// different tube widths share their Brownian increments.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace bbmtube {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

namespace detail {

inline void philox_round(Counter& ctr, const Key& key) {
    constexpr std::uint64_t kMul0 = 0xD2511F53u;
    constexpr std::uint64_t kMul1 = 0xCD9E8D57u;
    const std::uint64_t p0 = kMul0 * ctr[0];
    const std::uint64_t p1 = kMul1 * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
}

}  // namespace detail

inline Counter philox4x32_10(Counter ctr, Key key) {
    constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        detail::philox_round(ctr, key);
    }
    return ctr;
}

// SplitMix64 finalizer; used to derive replication seeds and particle ids.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Uniform on (0, 1]; never returns 0 so it is safe under log().
inline double to_unit_open0(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

// Four 64-bit uniforms (two Philox blocks) for a (stream, step, lane) address.
struct DrawBlock {
    std::array<double, 4> u;

    double normal() const {
        return std::sqrt(-2.0 * std::log(u[0])) * std::cos(2.0 * std::numbers::pi * u[1]);
    }
};

class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

    // Two 64-bit words for the address (stream, step, lane).
    std::array<std::uint64_t, 2> words(std::uint64_t stream, std::uint32_t step,
                                       std::uint32_t lane) const {
        const Counter c = philox4x32_10(
            {static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), step,
             lane},
            key_);
        return {(static_cast<std::uint64_t>(c[0]) << 32) | c[1],
                (static_cast<std::uint64_t>(c[2]) << 32) | c[3]};
    }

    double uniform(std::uint64_t stream, std::uint32_t step, std::uint32_t lane) const {
        return to_unit_open0(words(stream, step, lane)[0]);
    }

    double normal(std::uint64_t stream, std::uint32_t step, std::uint32_t lane) const {
        const auto w = words(stream, step, lane);
        return std::sqrt(-2.0 * std::log(to_unit_open0(w[0]))) *
               std::cos(2.0 * std::numbers::pi * to_unit_open0(w[1]));
    }

    // Lanes 0 and 1 of (stream, step) as four uniforms.
    DrawBlock block(std::uint64_t stream, std::uint32_t step) const {
        const auto a = words(stream, step, 0);
        const auto b = words(stream, step, 1);
        return {{to_unit_open0(a[0]), to_unit_open0(a[1]), to_unit_open0(b[0]),
                 to_unit_open0(b[1])}};
    }

    Key key() const { return key_; }

private:
    Key key_;
};

inline std::uint64_t replication_seed(std::uint64_t base_seed, std::uint64_t replication) {
    return mix64(base_seed ^ mix64(replication + 0x5851F42D4C957F2Dull));
}

// Identifier of child `which` (0 or 1) of `parent` born at `step`. Depends only
// on genealogy, so it is identical across coupled runs.
inline std::uint64_t child_id(std::uint64_t parent, std::uint32_t step, unsigned which) {
    return mix64(parent ^ mix64((static_cast<std::uint64_t>(step) << 1) | which));
}

}  // namespace bbmtube
