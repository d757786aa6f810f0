#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (seed, domain, address, position), so replicas, sites and steps can be
// evaluated in any order or in parallel with identical results.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <utility>

namespace symbranch::rng {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

// Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").
constexpr Counter philox4x32(Counter ctr, Key key) noexcept {
    constexpr std::uint32_t m0 = 0xD2511F53u;
    constexpr std::uint32_t m1 = 0xCD9E8D57u;
    constexpr std::uint32_t w0 = 0x9E3779B9u;
    constexpr std::uint32_t w1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = std::uint64_t{m0} * ctr[0];
        const std::uint64_t p1 = std::uint64_t{m1} * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += w0;
        key[1] += w1;
    }
    return ctr;
}

// SplitMix64 finalizer; used only to derive keys.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Separates the random streams used by different parts of the library.
enum class Domain : std::uint32_t {
    sde_noise = 1,
    dual_chain = 2,
    quadrant_exit = 3,
    exit_resolution = 4,
    bootstrap = 5,
    moment_probe = 6,
};

constexpr Key derive_key(std::uint64_t seed, Domain domain, std::uint64_t extra = 0) noexcept {
    const std::uint64_t k =
        mix64(mix64(seed ^ (std::uint64_t{static_cast<std::uint32_t>(domain)} << 56)) ^ mix64(extra));
    return {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

// Uniform on (0, 1] with 53 random bits; never returns 0 so log() is safe.
constexpr double to_unit_open_closed(std::uint64_t bits) noexcept {
    return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;
}

constexpr std::uint64_t join(std::uint32_t lo, std::uint32_t hi) noexcept {
    return std::uint64_t{lo} | (std::uint64_t{hi} << 32);
}

// Two independent standard normals from one Philox block (Box-Muller).
inline std::pair<double, double> normal_pair(const Counter& block) noexcept {
    const double u1 = to_unit_open_closed(join(block[0], block[1]));
    const double u2 = to_unit_open_closed(join(block[2], block[3]));
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(angle), r * std::sin(angle)};
}

// Sequential view of a counter-based stream: position p maps to the block
// philox(p_lo, p_hi, address_lo, address_hi). Satisfies
// UniformRandomBitGenerator so it also plugs into <algorithm> shuffles.
class CounterEngine {
public:
    using result_type = std::uint64_t;

    CounterEngine(std::uint64_t seed, Domain domain, std::uint64_t address, std::uint64_t key_extra = 0) noexcept
        : key_(derive_key(seed, domain, key_extra)), address_(address) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        if (!has_spare_) {
            const Counter b = next_block();
            spare_ = join(b[2], b[3]);
            has_spare_ = true;
            return join(b[0], b[1]);
        }
        has_spare_ = false;
        return spare_;
    }

    double uniform() noexcept { return to_unit_open_closed((*this)()); }

    // Exp(rate) by inversion; rate must be positive.
    double exponential(double rate) noexcept { return -std::log(uniform()) / rate; }

    std::pair<double, double> normal_pair() noexcept { return rng::normal_pair(next_block()); }

    std::uint64_t position() const noexcept { return position_; }

private:
    Counter next_block() noexcept {
        const Counter ctr{static_cast<std::uint32_t>(position_), static_cast<std::uint32_t>(position_ >> 32),
                          static_cast<std::uint32_t>(address_), static_cast<std::uint32_t>(address_ >> 32)};
        ++position_;
        return philox4x32(ctr, key_);
    }

    Key key_;
    std::uint64_t address_;
    std::uint64_t position_ = 0;
    std::uint64_t spare_ = 0;
    bool has_spare_ = false;
};

} // namespace symbranch::rng
