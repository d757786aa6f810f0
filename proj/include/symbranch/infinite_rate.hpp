#pragma once

// Trotter approximation of the infinite-rate system: a heat-flow step for both
// types followed by per-site resolution of overlaps to E through the exit
// point of rho-correlated planar Brownian motion.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dual.hpp"
#include "errors.hpp"
#include "migration.hpp"
#include "quadrant.hpp"
#include "random.hpp"
#include "sbm_sde.hpp"

namespace symbranch {

inline constexpr double kInnerStepFraction = 0.01; // resolution step cap = dt / 100

struct TrotterContext {
    double rho = -0.5;
    double dt = 1e-2;
    std::uint64_t seed = 0;
    std::uint64_t replica = 0;
};

namespace detail {

inline void check_e_valued(const FieldPair& f) {
    if (!f.e_valued()) throw PreconditionError("state is not E-valued: u(i) v(i) > 0 at some site");
}

inline std::uint64_t resolution_address(std::uint64_t replica, std::size_t site) {
    return (replica << 32) | static_cast<std::uint64_t>(site);
}

inline void trotter_step_into(const FieldPair& state, FieldPair& out, const MigrationKernel& kernel,
                              const TrotterContext& ctx, std::size_t step, StepScratch& scratch) {
    const std::size_t n = kernel.size();
    scratch.au.resize(n);
    scratch.av.resize(n);
    out.u.resize(n);
    out.v.resize(n);
    kernel.apply(state.u, scratch.au);
    kernel.apply(state.v, scratch.av);
    for (std::size_t i = 0; i < n; ++i) {
        out.u[i] = std::max(0.0, state.u[i] + ctx.dt * scratch.au[i]);
        out.v[i] = std::max(0.0, state.v[i] + ctx.dt * scratch.av[i]);
        if (!std::isfinite(out.u[i]) || !std::isfinite(out.v[i])) throw NumericalBlowup(i, step);
    }
    const double inner = ctx.dt * kInnerStepFraction;
    for (std::size_t i = 0; i < n; ++i) {
        if (out.u[i] > 0.0 && out.v[i] > 0.0) {
            rng::CounterEngine engine(ctx.seed, rng::Domain::exit_resolution, resolution_address(ctx.replica, i), step);
            const ExitSample e = resolve_exit(ctx.rho, {out.u[i], out.v[i]}, inner, engine);
            out.u[i] = e.exit_point.first;
            out.v[i] = e.exit_point.second;
        }
    }
}

} // namespace detail

// One heat-then-resolve step; `step` keys the resolution streams.
inline FieldPair trotter_step(const FieldPair& state, const MigrationKernel& kernel, const TrotterContext& ctx,
                              std::size_t step = 1) {
    detail::check_field(state, kernel.size());
    detail::check_e_valued(state);
    check_correlation(ctx.rho);
    if (!(ctx.dt > 0.0) || !std::isfinite(ctx.dt)) throw DomainError("dt must be positive");
    FieldPair out;
    detail::StepScratch scratch;
    detail::trotter_step_into(state, out, kernel, ctx, step, scratch);
    return out;
}

// Ensemble of Trotter trajectories; params.gamma is ignored (treated as inf).
inline EnsembleResult simulate_infinite(const MigrationKernel& kernel, ModelParams params, const FieldPair& initial,
                                        const EnsembleOptions& options = {}) {
    params.gamma = std::numeric_limits<double>::infinity();
    params.validate(true);
    detail::check_field(initial, kernel.size());
    detail::check_e_valued(initial);
    return detail::run_ensemble(kernel, params, initial, options, [&params, &kernel](std::size_t rep) {
        return [&params, &kernel, ctx = TrotterContext{params.rho, params.dt, params.seed, rep},
                scratch = detail::StepScratch{}](std::size_t step, const FieldPair& in, FieldPair& out,
                                                 StabilityReport&) mutable {
            detail::trotter_step_into(in, out, kernel, ctx, step, scratch);
        };
    });
}

// Exact second moments of the Trotter scheme with an exact resolution map:
// heat flow K (x) K followed by removal of the diagonal,
//   W_{n+1}(a,b) = 1{a != b} ((K (x) K) W_n)(a,b).
// The resolution is a per-site martingale, independent across sites.
inline std::vector<double> trotter_second_moment(const MigrationKernel& kernel, double dt, const std::vector<double>& u0,
                                                 const std::vector<double>& v0, std::size_t steps) {
    detail::check_initial(u0, v0, kernel.size());
    if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("dt must be positive");
    const std::size_t n = kernel.size();
    std::vector<double> w = detail::tensor(u0, v0);
    for (std::size_t i = 0; i < n; ++i) w[i * n + i] = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
        w = detail::heat_tensor_step(kernel, dt, w);
        for (std::size_t i = 0; i < n; ++i) w[i * n + i] = 0.0;
    }
    return w;
}

struct GammaStudyRow {
    double time = 0.0;
    std::size_t a = 0;
    std::size_t b = 0;
    std::vector<double> fk;   // per gamma
    double limit = 0.0;       // gamma = inf value
    std::vector<double> gaps; // |fk - limit| per gamma
    bool monotone_values = true;
    bool monotone_gaps = true;
};

struct GammaStudy {
    double rho = 0.0;
    std::vector<double> gammas;
    std::vector<double> times;
    std::vector<GammaStudyRow> rows;

    bool all_monotone() const {
        for (const auto& r : rows)
            if (!r.monotone_values || !r.monotone_gaps) return false;
        return true;
    }
};

inline GammaStudy gamma_convergence_study(const MigrationKernel& kernel, double rho, const std::vector<double>& u0,
                                          const std::vector<double>& v0, const std::vector<double>& gamma_list,
                                          const std::vector<double>& t_list, double tie_tolerance = 1e-12) {
    if (!(rho < 0.0)) throw PreconditionError("gamma convergence study requires rho < 0");
    if (gamma_list.empty()) throw PreconditionError("gamma list must be nonempty");
    for (std::size_t k = 0; k < gamma_list.size(); ++k) {
        if (!(gamma_list[k] > 0.0) || !std::isfinite(gamma_list[k]))
            throw DomainError("gamma values must be finite and positive");
        if (k > 0 && !(gamma_list[k] > gamma_list[k - 1])) throw PreconditionError("gamma list must be increasing");
    }
    const std::size_t n = kernel.size();
    GammaStudy study;
    study.rho = rho;
    study.gammas = gamma_list;
    study.times = t_list;
    for (double t : t_list) {
        std::vector<std::vector<double>> fields;
        for (double g : gamma_list) fields.push_back(fk_field(kernel, g, rho, u0, v0, t));
        const auto limit = fk_field(kernel, std::numeric_limits<double>::infinity(), rho, u0, v0, t);
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = 0; b < n; ++b) {
                GammaStudyRow row;
                row.time = t;
                row.a = a;
                row.b = b;
                row.limit = limit[a * n + b];
                for (std::size_t k = 0; k < gamma_list.size(); ++k) {
                    row.fk.push_back(fields[k][a * n + b]);
                    row.gaps.push_back(std::abs(row.fk.back() - row.limit));
                    if (k > 0) {
                        const double slack = tie_tolerance * std::max(1.0, std::abs(row.fk[k - 1]));
                        if (row.fk[k] > row.fk[k - 1] + slack) row.monotone_values = false;
                        if (row.gaps[k] > row.gaps[k - 1] + slack) row.monotone_gaps = false;
                    }
                }
                study.rows.push_back(std::move(row));
            }
        }
    }
    return study;
}

} // namespace symbranch
