#pragma once

// Sparse generators and their exponentials by uniformization: for a generator
// G with nonnegative off-diagonal part, pick lambda >= max |G_ii| and write
// exp(tG) = sum_n Pois(n; lambda t) K^n with K = I + G / lambda >= 0.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "errors.hpp"

namespace symbranch {

struct SparseGenerator {
    std::size_t n = 0;
    // Off-diagonal part in CSR form; all rates are nonnegative.
    std::vector<std::size_t> row_ptr{0};
    std::vector<std::uint32_t> col;
    std::vector<double> rate;
    // Diagonal, including any potential term.
    std::vector<double> diag;

    // y = G x
    void apply(std::span<const double> x, std::span<double> y) const {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = diag[i] * x[i];
            for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) acc += rate[k] * x[col[k]];
            y[i] = acc;
        }
    }

    // Largest net growth rate max_i (G_ii + sum_j G_ij); zero for a conservative generator.
    double max_growth() const {
        double c = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            double s = diag[i];
            for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) s += rate[k];
            c = std::max(c, s);
        }
        return n == 0 ? 0.0 : c;
    }
};

struct UniformizationOptions {
    // Bound on the discarded Poisson tail mass; the sup-norm error of the
    // result is at most tolerance * ||x||_inf * exp(shift * t).
    double tolerance = 1e-12;
    // Optional per-state mask: states flagged nonzero are absorbing
    // cemeteries whose mass is discarded (sub-Markov semigroup).
    const std::vector<char>* killed = nullptr;
};

namespace detail {

// Smallest m with P(N > m) <= tol for N ~ Poisson(mean).
inline std::size_t poisson_truncation(double mean, double tol) {
    if (mean <= 0.0) return 0;
    auto m = static_cast<std::size_t>(std::ceil(mean));
    while (boost::math::gamma_p(static_cast<double>(m + 1), mean) > tol) {
        m += 1 + static_cast<std::size_t>(std::sqrt(mean) / 8.0);
    }
    // Walk back to the smallest admissible index.
    while (m > 0 && boost::math::gamma_p(static_cast<double>(m), mean) <= tol) --m;
    return m;
}

inline double poisson_weight(std::size_t k, double mean) {
    if (mean <= 0.0) return k == 0 ? 1.0 : 0.0;
    const double kd = static_cast<double>(k);
    return std::exp(-mean + kd * std::log(mean) - std::lgamma(kd + 1.0));
}

struct UniformizedStep {
    const SparseGenerator& gen;
    double shift;
    double lambda;
    const std::vector<char>* killed;

    // y = (I + (G - shift I) / lambda) x
    void operator()(std::span<const double> x, std::span<double> y) const {
        gen.apply(x, y);
        for (std::size_t i = 0; i < gen.n; ++i) y[i] = x[i] + (y[i] - shift * x[i]) / lambda;
        if (killed) {
            for (std::size_t i = 0; i < gen.n; ++i)
                if ((*killed)[i]) y[i] = 0.0;
        }
    }
};

inline double uniformization_rate(const SparseGenerator& gen, double shift) {
    double lambda = 0.0;
    for (double d : gen.diag) lambda = std::max(lambda, std::abs(d - shift));
    return lambda;
}

} // namespace detail

// exp(tG) x. Positive potentials are handled by shifting G by its largest net
// growth rate, which keeps K sub-stochastic.
inline std::vector<double> expm_apply(const SparseGenerator& gen, double t, std::vector<double> x,
                                      const UniformizationOptions& opts = {}) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw DomainError("time must be finite and nonnegative");
    if (x.size() != gen.n) throw PreconditionError("vector length does not match generator dimension");
    if (opts.killed)
        for (std::size_t i = 0; i < gen.n; ++i)
            if ((*opts.killed)[i]) x[i] = 0.0;
    if (t == 0.0 || gen.n == 0) return x;

    double shift = gen.max_growth();
    if (opts.killed == nullptr && std::abs(shift) < 1e-14) shift = 0.0;
    if (opts.killed != nullptr) shift = std::max(shift, 0.0);
    const double lambda = detail::uniformization_rate(gen, shift);
    const double growth = std::exp(shift * t);
    if (lambda == 0.0) {
        for (double& v : x) v *= growth;
        return x;
    }

    const double mean = lambda * t;
    const std::size_t m = detail::poisson_truncation(mean, opts.tolerance);
    const detail::UniformizedStep step{gen, shift, lambda, opts.killed};

    std::vector<double> result(gen.n, 0.0);
    std::vector<double> cur = std::move(x);
    std::vector<double> next(gen.n);
    for (std::size_t k = 0; k <= m; ++k) {
        const double w = detail::poisson_weight(k, mean);
        if (w > 0.0)
            for (std::size_t i = 0; i < gen.n; ++i) result[i] += w * cur[i];
        if (k == m) break;
        step(cur, next);
        cur.swap(next);
    }
    for (double& v : result) v *= growth;
    return result;
}

// integral_0^T exp(sG) x ds for a conservative generator (no potential), via
// integral_0^T Pois(k; lambda s) ds = P(N_{lambda T} > k) / lambda.
inline std::vector<double> integrated_expm_apply(const SparseGenerator& gen, double horizon, std::vector<double> x,
                                                 double tolerance = 1e-12) {
    if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw DomainError("horizon must be finite and nonnegative");
    if (x.size() != gen.n) throw PreconditionError("vector length does not match generator dimension");
    std::vector<double> result(gen.n, 0.0);
    if (horizon == 0.0 || gen.n == 0) return result;

    const double lambda = detail::uniformization_rate(gen, 0.0);
    if (lambda == 0.0) {
        for (std::size_t i = 0; i < gen.n; ++i) result[i] = horizon * x[i];
        return result;
    }
    const double mean = lambda * horizon;
    const detail::UniformizedStep step{gen, 0.0, lambda, nullptr};
    std::vector<double> cur = std::move(x);
    std::vector<double> next(gen.n);
    // The discarded remainder is sum_{j>k} P(N > j) / lambda, bounded by
    // E[(N - k)^+] / lambda; stop once the current weight is negligible past the mode.
    for (std::size_t k = 0;; ++k) {
        const double w = boost::math::gamma_p(static_cast<double>(k + 1), mean) / lambda;
        for (std::size_t i = 0; i < gen.n; ++i) result[i] += w * cur[i];
        if (static_cast<double>(k) > mean && w * (std::sqrt(mean) + 1.0) < tolerance) break;
        step(cur, next);
        cur.swap(next);
    }
    return result;
}

} // namespace symbranch
