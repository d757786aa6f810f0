#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "errors.hpp"
#include "random.hpp"

namespace symbranch {

// One site's pair of Brownian increments over a step.
struct NoisePair {
    double d1 = 0.0;
    double d2 = 0.0;
};

inline void check_correlation(double rho) {
    if (!(rho >= -1.0 && rho <= 1.0)) throw DomainError("correlation rho must lie in [-1, 1]");
}

// Reproducible source of rho-correlated per-site increments. Draw (step, site)
// of replica `stream_id` is Philox(step, site, stream_id) under a key derived
// from the seed, so streams are independent of evaluation order.
class NoiseStream {
public:
    NoiseStream(std::uint64_t seed, std::uint64_t stream_id, double rho)
        : seed_(seed), stream_id_(stream_id), rho_(rho),
          key_(rng::derive_key(seed, rng::Domain::sde_noise)) {
        check_correlation(rho);
        if (stream_id > std::numeric_limits<std::uint32_t>::max())
            throw DomainError("stream_id must fit in 32 bits");
        companion_ = std::sqrt(1.0 - rho * rho);
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }
    double rho() const noexcept { return rho_; }
    std::uint64_t counter() const noexcept { return counter_; }

    // dB1 ~ N(0, dt); dB2 = rho dB1 + sqrt(1 - rho^2) dW with dW independent.
    // Increments at distinct sites are independent. Advances the counter by one step.
    std::vector<NoisePair> sample_increments(double dt, std::size_t n_sites) {
        std::vector<NoisePair> out(n_sites);
        sample_into(dt, out);
        return out;
    }

    void sample_into(double dt, std::vector<NoisePair>& out) {
        if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("dt must be positive");
        if (out.size() > std::numeric_limits<std::uint32_t>::max()) throw DomainError("too many sites");
        const double scale = std::sqrt(dt);
        const auto step_lo = static_cast<std::uint32_t>(counter_);
        const auto step_hi = static_cast<std::uint32_t>(counter_ >> 32);
        for (std::size_t i = 0; i < out.size(); ++i) {
            const rng::Counter ctr{step_lo, step_hi, static_cast<std::uint32_t>(i),
                                   static_cast<std::uint32_t>(stream_id_)};
            const auto [z1, z2] = rng::normal_pair(rng::philox4x32(ctr, key_));
            const double b1 = scale * z1;
            out[i].d1 = b1;
            out[i].d2 = rho_ * b1 + companion_ * (scale * z2);
        }
        ++counter_;
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    double rho_;
    double companion_ = 0.0;
    rng::Key key_;
    std::uint64_t counter_ = 0;
};

} // namespace symbranch
