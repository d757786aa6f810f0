#pragma once

// Dual pair of independent migration chains with collision time
//   L_t = int_0^t 1{xi1_s = xi2_s} ds
// and the second-moment duality
//   E[u_t(a) v_t(b)] = E^{a,b}[u0(xi1_t) v0(xi2_t) exp(rho gamma L_t)],
// with exp(rho gamma L_t) replaced by 1{L_t = 0} at gamma = inf.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "errors.hpp"
#include "migration.hpp"
#include "noise.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "stats.hpp"
#include "uniformization.hpp"

namespace symbranch {

struct DualSample {
    std::pair<std::size_t, std::size_t> start;
    std::pair<std::size_t, std::size_t> end;
    double collision_time = 0.0;
    bool never_met = true;
};

namespace detail {

// Target of a jump out of x, chosen with probability a(x,y) / |a(x,x)|.
inline std::size_t pick_neighbor(const MigrationKernel& kernel, std::size_t x, double total, double u) {
    const auto nb = kernel.neighbors(x);
    double target = u * total;
    for (const auto& e : nb) {
        target -= e.rate;
        if (target <= 0.0) return e.site;
    }
    return nb.back().site;
}

} // namespace detail

// Exact event-driven simulation of (xi1, xi2) on [0, t].
inline DualSample simulate_dual(const MigrationKernel& kernel, std::size_t a, std::size_t b, double t,
                                rng::CounterEngine& engine) {
    kernel.check_site(a);
    kernel.check_site(b);
    detail::check_time(t, "time");
    DualSample s;
    s.start = {a, b};
    std::size_t x1 = a;
    std::size_t x2 = b;
    double now = 0.0;
    double L = 0.0;
    bool met = x1 == x2;
    while (true) {
        const double r1 = -kernel.diagonal(x1);
        const double r2 = -kernel.diagonal(x2);
        const double r = r1 + r2;
        const double hold = r > 0.0 ? engine.exponential(r) : std::numeric_limits<double>::infinity();
        if (now + hold >= t) {
            if (x1 == x2) L += t - now;
            break;
        }
        if (x1 == x2) L += hold;
        now += hold;
        if (engine.uniform() * r <= r1)
            x1 = detail::pick_neighbor(kernel, x1, r1, engine.uniform());
        else
            x2 = detail::pick_neighbor(kernel, x2, r2, engine.uniform());
        met = met || x1 == x2;
    }
    s.end = {x1, x2};
    s.collision_time = std::min(L, t);
    s.never_met = !met;
    return s;
}

// Generator of the pair chain on S x S, state (i,j) -> i*N + j:
//   A (x) I + I (x) A + potential * D,  D = diag(1{i = j}).
struct PairGenerator {
    std::size_t sites = 0;
    double potential = 0.0;
    SparseGenerator gen;
    std::vector<char> diagonal; // 1 on the N states with i = j

    std::size_t index(std::size_t i, std::size_t j) const noexcept { return i * sites + j; }

    Eigen::MatrixXd dense() const {
        const auto m = static_cast<Eigen::Index>(gen.n);
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m, m);
        for (std::size_t s = 0; s < gen.n; ++s) {
            g(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s)) = gen.diag[s];
            for (std::size_t k = gen.row_ptr[s]; k < gen.row_ptr[s + 1]; ++k)
                g(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(gen.col[k])) += gen.rate[k];
        }
        return g;
    }
};

inline PairGenerator make_pair_generator(const MigrationKernel& kernel, double potential = 0.0) {
    if (!std::isfinite(potential)) throw DomainError("pair potential must be finite");
    const std::size_t n = kernel.size();
    PairGenerator p;
    p.sites = n;
    p.potential = potential;
    p.gen.n = n * n;
    p.gen.row_ptr.assign(1, 0);
    p.gen.diag.resize(n * n);
    p.diagonal.assign(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t s = i * n + j;
            // Column order within a row is kept ascending.
            std::vector<std::pair<std::uint32_t, double>> row;
            for (const auto& e : kernel.neighbors(i)) row.emplace_back(static_cast<std::uint32_t>(e.site * n + j), e.rate);
            for (const auto& e : kernel.neighbors(j)) row.emplace_back(static_cast<std::uint32_t>(i * n + e.site), e.rate);
            std::sort(row.begin(), row.end());
            for (const auto& [c, r] : row) {
                p.gen.col.push_back(c);
                p.gen.rate.push_back(r);
            }
            p.gen.row_ptr.push_back(p.gen.col.size());
            p.gen.diag[s] = kernel.diagonal(i) + kernel.diagonal(j);
            if (i == j) {
                p.gen.diag[s] += potential;
                p.diagonal[s] = 1;
            }
        }
    }
    return p;
}

enum class OracleMethod { automatic, uniformization, dense };

inline constexpr std::size_t kDenseSiteLimit = 64;

namespace detail {

inline void check_initial(const std::vector<double>& u0, const std::vector<double>& v0, std::size_t n) {
    if (u0.size() != n || v0.size() != n) throw PreconditionError("initial field length does not match number of sites");
    for (std::size_t i = 0; i < n; ++i)
        if (!(u0[i] >= 0.0) || !(v0[i] >= 0.0) || !std::isfinite(u0[i]) || !std::isfinite(v0[i]))
            throw PreconditionError("initial fields must be finite and nonnegative");
}

inline void check_gamma(double gamma, double rho) {
    check_correlation(rho);
    if (std::isnan(gamma) || gamma < 0.0) throw DomainError("gamma must be nonnegative");
    if (std::isinf(gamma) && !(rho < 0.0))
        throw PreconditionError("the gamma = inf duality weight 1{L_t = 0} requires rho < 0");
}

inline std::vector<double> tensor(const std::vector<double>& u0, const std::vector<double>& v0) {
    const std::size_t n = u0.size();
    std::vector<double> w(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) w[i * n + j] = u0[i] * v0[j];
    return w;
}

// exp(t G_killed) w on the off-diagonal states, diagonal entries absorbing.
inline std::vector<double> dense_killed_apply(const PairGenerator& pg, double t, const std::vector<double>& w) {
    std::vector<std::size_t> keep;
    for (std::size_t s = 0; s < pg.gen.n; ++s)
        if (!pg.diagonal[s]) keep.push_back(s);
    const Eigen::MatrixXd full = pg.dense();
    const auto m = static_cast<Eigen::Index>(keep.size());
    Eigen::MatrixXd g(m, m);
    Eigen::VectorXd x(m);
    for (Eigen::Index r = 0; r < m; ++r) {
        x(r) = w[keep[static_cast<std::size_t>(r)]];
        for (Eigen::Index c = 0; c < m; ++c)
            g(r, c) = full(static_cast<Eigen::Index>(keep[static_cast<std::size_t>(r)]),
                           static_cast<Eigen::Index>(keep[static_cast<std::size_t>(c)]));
    }
    const Eigen::VectorXd y = (t * g).exp() * x;
    std::vector<double> out(pg.gen.n, 0.0);
    for (Eigen::Index r = 0; r < m; ++r) out[keep[static_cast<std::size_t>(r)]] = y(r);
    return out;
}

inline std::vector<double> pair_apply(const PairGenerator& pg, bool killed, double t, std::vector<double> w,
                                      OracleMethod method) {
    if (method == OracleMethod::dense) {
        if (pg.sites > kDenseSiteLimit)
            throw PreconditionError("dense evaluation supports at most " + std::to_string(kDenseSiteLimit) + " sites");
        if (killed) return dense_killed_apply(pg, t, w);
        const Eigen::Map<const Eigen::VectorXd> x(w.data(), static_cast<Eigen::Index>(w.size()));
        const Eigen::VectorXd y = (t * pg.dense()).exp() * x;
        return {y.data(), y.data() + y.size()};
    }
    UniformizationOptions opts;
    opts.tolerance = kSeriesTolerance;
    if (killed) opts.killed = &pg.diagonal;
    return expm_apply(pg.gen, t, std::move(w), opts);
}

} // namespace detail

// w_t = exp(t (A (x) I + I (x) A + rho gamma D)) (u0 (x) v0), the full field of
// second moments E[u_t(a) v_t(b)] indexed a*N + b; killed-diagonal variant at gamma = inf.
inline std::vector<double> fk_field(const MigrationKernel& kernel, double gamma, double rho, const std::vector<double>& u0,
                                    const std::vector<double>& v0, double t,
                                    OracleMethod method = OracleMethod::automatic) {
    detail::check_initial(u0, v0, kernel.size());
    detail::check_gamma(gamma, rho);
    detail::check_time(t, "time");
    const bool killed = std::isinf(gamma);
    const PairGenerator pg = make_pair_generator(kernel, killed ? 0.0 : rho * gamma);
    return detail::pair_apply(pg, killed, t, detail::tensor(u0, v0), method);
}

inline double fk_oracle(const MigrationKernel& kernel, double gamma, double rho, const std::vector<double>& u0,
                        const std::vector<double>& v0, std::size_t a, std::size_t b, double t,
                        OracleMethod method = OracleMethod::automatic) {
    kernel.check_site(a);
    kernel.check_site(b);
    return fk_field(kernel, gamma, rho, u0, v0, t, method)[a * kernel.size() + b];
}

// Second-moment fields along an increasing time grid, propagated incrementally.
inline std::vector<std::vector<double>> fk_curve(const MigrationKernel& kernel, double gamma, double rho,
                                                 const std::vector<double>& u0, const std::vector<double>& v0,
                                                 const std::vector<double>& grid) {
    detail::check_initial(u0, v0, kernel.size());
    detail::check_gamma(gamma, rho);
    const bool killed = std::isinf(gamma);
    const PairGenerator pg = make_pair_generator(kernel, killed ? 0.0 : rho * gamma);
    std::vector<std::vector<double>> out;
    std::vector<double> w = detail::tensor(u0, v0);
    if (killed)
        for (std::size_t s = 0; s < w.size(); ++s)
            if (pg.diagonal[s]) w[s] = 0.0;
    double prev = 0.0;
    for (double t : grid) {
        detail::check_time(t, "grid time");
        if (t < prev) throw PreconditionError("time grid must be nondecreasing");
        w = detail::pair_apply(pg, killed, t - prev, std::move(w), OracleMethod::uniformization);
        out.push_back(w);
        prev = t;
    }
    return out;
}

// Sum over (i,j) of u0(i) v0(j) E^{i,j}[weight] per grid time, i.e. the oracle E[M_t].
inline std::vector<double> coexistence_functional(const MigrationKernel& kernel, const std::vector<double>& u0,
                                                  const std::vector<double>& v0, double gamma, double rho,
                                                  const std::vector<double>& grid) {
    detail::check_initial(u0, v0, kernel.size());
    if (!(gamma > 0.0)) throw DomainError("gamma must lie in (0, inf]");
    if (std::isinf(gamma))
        for (std::size_t i = 0; i < u0.size(); ++i)
            if (u0[i] * v0[i] != 0.0)
                throw PreconditionError("gamma = inf requires E-valued initial data (u0(i) v0(i) = 0 at every site)");
    std::vector<double> out;
    for (const auto& w : fk_curve(kernel, gamma, rho, u0, v0, grid)) out.push_back(pairwise_sum(w));
    return out;
}

// P^{a,b}(xi1_s != xi2_s for all s <= t) from the absorbing off-diagonal chain.
inline double no_collision_exact(const MigrationKernel& kernel, std::size_t a, std::size_t b, double t) {
    kernel.check_site(a);
    kernel.check_site(b);
    detail::check_time(t, "time");
    if (a == b) return 0.0;
    const PairGenerator pg = make_pair_generator(kernel);
    const auto w = detail::pair_apply(pg, true, t, std::vector<double>(pg.gen.n, 1.0), OracleMethod::uniformization);
    return w[pg.index(a, b)];
}

// E^{a,b}[L_t] = int_0^t (exp(sG) 1_diag)(a,b) ds.
inline double expected_collision_time(const MigrationKernel& kernel, std::size_t a, std::size_t b, double t) {
    kernel.check_site(a);
    kernel.check_site(b);
    detail::check_time(t, "time");
    const PairGenerator pg = make_pair_generator(kernel);
    std::vector<double> ind(pg.gen.n);
    for (std::size_t s = 0; s < ind.size(); ++s) ind[s] = pg.diagonal[s] ? 1.0 : 0.0;
    return integrated_expm_apply(pg.gen, t, std::move(ind), kSeriesTolerance)[pg.index(a, b)];
}

struct DualMonteCarlo {
    std::uint64_t seed = 0;
    std::size_t samples = 10000;
    unsigned threads = 0;
};

namespace detail {

// Sample k of start (a,b) draws from engine address k under a key bound to (a,b).
template <class Fn>
Estimate dual_average(const MigrationKernel& kernel, std::size_t a, std::size_t b, double t, const DualMonteCarlo& mc,
                      Fn&& value) {
    kernel.check_site(a);
    kernel.check_site(b);
    detail::check_time(t, "time");
    if (mc.samples == 0) throw PreconditionError("at least one dual sample is required");
    std::vector<double> x(mc.samples);
    const std::uint64_t tag = static_cast<std::uint64_t>(a) * kernel.size() + b;
    parallel_for(
        mc.samples,
        [&](std::size_t k) {
            rng::CounterEngine engine(mc.seed, rng::Domain::dual_chain, k, tag);
            x[k] = value(simulate_dual(kernel, a, b, t, engine));
        },
        mc.threads);
    return summarize(x);
}

} // namespace detail

// Monte Carlo mean of u0(xi1_t) v0(xi2_t) exp(rho gamma L_t) over exact dual samples.
inline Estimate dual_moment_estimate(const MigrationKernel& kernel, const std::vector<double>& u0,
                                     const std::vector<double>& v0, double gamma, double rho, std::size_t a,
                                     std::size_t b, double t, const DualMonteCarlo& mc) {
    detail::check_initial(u0, v0, kernel.size());
    check_correlation(rho);
    if (!std::isfinite(gamma) || gamma < 0.0) throw PreconditionError("dual_moment_estimate requires finite gamma >= 0");
    const double w = rho * gamma;
    return detail::dual_average(kernel, a, b, t, mc, [&](const DualSample& s) {
        return u0[s.end.first] * v0[s.end.second] * std::exp(w * s.collision_time);
    });
}

inline Estimate no_collision_probability(const MigrationKernel& kernel, std::size_t a, std::size_t b, double t,
                                         const DualMonteCarlo& mc) {
    return detail::dual_average(kernel, a, b, t, mc, [](const DualSample& s) { return s.never_met ? 1.0 : 0.0; });
}

inline Estimate collision_time_estimate(const MigrationKernel& kernel, std::size_t a, std::size_t b, double t,
                                        const DualMonteCarlo& mc) {
    return detail::dual_average(kernel, a, b, t, mc, [](const DualSample& s) { return s.collision_time; });
}

namespace detail {

// (K (x) K) w with K = I + dt A, w indexed i*N + j.
inline std::vector<double> heat_tensor_step(const MigrationKernel& kernel, double dt, const std::vector<double>& w) {
    const std::size_t n = kernel.size();
    std::vector<double> out(n * n);
    std::vector<double> col(n);
    std::vector<double> kcol(n);
    std::vector<double> al(n);
    auto heat = [&](std::span<const double> x, std::span<double> y) {
        kernel.apply(x, al);
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] + dt * al[i];
    };
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = w[i * n + j];
        heat(col, kcol);
        for (std::size_t i = 0; i < n; ++i) out[i * n + j] = kcol[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::span<double> row(out.data() + i * n, n);
        col.assign(row.begin(), row.end());
        heat(col, row);
    }
    return out;
}

} // namespace detail

// Exact second moments of the unclamped Euler-Maruyama scheme after `steps`
// steps of size dt:
//   W_{n+1} = (K (x) K + rho gamma dt D) W_n,  K = I + dt A.
// Differences to fk_field isolate the scheme's time-discretization bias.
inline std::vector<double> scheme_second_moment(const MigrationKernel& kernel, double gamma, double rho, double dt,
                                                const std::vector<double>& u0, const std::vector<double>& v0,
                                                std::size_t steps) {
    detail::check_initial(u0, v0, kernel.size());
    check_correlation(rho);
    if (!std::isfinite(gamma) || gamma < 0.0) throw PreconditionError("scheme recursion requires finite gamma >= 0");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("dt must be positive");
    const std::size_t n = kernel.size();
    std::vector<double> w = detail::tensor(u0, v0);
    for (std::size_t step = 0; step < steps; ++step) {
        std::vector<double> next = detail::heat_tensor_step(kernel, dt, w);
        for (std::size_t i = 0; i < n; ++i) next[i * n + i] += rho * gamma * dt * w[i * n + i];
        w.swap(next);
    }
    return w;
}

} // namespace symbranch
