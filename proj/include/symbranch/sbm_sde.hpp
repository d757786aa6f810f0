#pragma once

// Euler-Maruyama ensembles for the finite-rate symbiotic branching system
//   du(i) = (A u)(i) dt + sqrt(gamma u(i) v(i)) dB1(i)
//   dv(i) = (A v)(i) dt + sqrt(gamma u(i) v(i)) dB2(i)
// with total-mass, bracket and moment tracking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "migration.hpp"
#include "noise.hpp"
#include "parallel.hpp"
#include "stats.hpp"

namespace symbranch {

struct FieldPair {
    std::vector<double> u;
    std::vector<double> v;

    std::size_t size() const noexcept { return u.size(); }

    // True iff u(i) v(i) == 0 at every site.
    bool e_valued() const noexcept {
        for (std::size_t i = 0; i < u.size(); ++i)
            if (u[i] * v[i] != 0.0) return false;
        return true;
    }

    double mass_u() const { return pairwise_sum(u); }
    double mass_v() const { return pairwise_sum(v); }
};

inline FieldPair homogeneous_initial(std::size_t n) { return {std::vector<double>(n, 1.0), std::vector<double>(n, 1.0)}; }

// u0 = 1_k, v0 = 1_l
inline FieldPair localized_initial(std::size_t n, std::size_t k, std::size_t l) {
    if (k >= n || l >= n) throw IndexError("localized initial site outside the site set");
    FieldPair f{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    f.u[k] = 1.0;
    f.v[l] = 1.0;
    return f;
}

struct ModelParams {
    double rho = 0.0;
    double gamma = 1.0; // +infinity only for the infinite-rate scheme
    double dt = 1e-3;
    double horizon = 1.0;
    std::size_t replicas = 1;
    std::uint64_t seed = 0;
    std::vector<double> record_times;

    std::size_t steps() const { return grid_index(horizon, "horizon"); }

    // Step index of a time on the dt grid; off-grid times are a domain error.
    std::size_t grid_index(double t, const char* what = "time") const {
        if (!std::isfinite(t) || t < 0.0) throw DomainError(std::string(what) + " must be finite and nonnegative");
        const double k = std::round(t / dt);
        if (std::abs(k * dt - t) > 1e-9 * std::max(1.0, t))
            throw DomainError(std::string(what) + " " + std::to_string(t) + " is not on the dt grid");
        return static_cast<std::size_t>(k);
    }

    void validate(bool allow_infinite_gamma = false) const {
        check_correlation(rho);
        if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("dt must be positive");
        if (std::isinf(gamma)) {
            if (!allow_infinite_gamma)
                throw PreconditionError("gamma = inf is only accepted by the infinite-rate scheme");
        } else if (!(gamma >= 0.0) || std::isnan(gamma)) {
            throw DomainError("gamma must be nonnegative");
        }
        if (replicas == 0) throw PreconditionError("at least one replica is required");
        const std::size_t n = steps();
        for (double t : record_times)
            if (grid_index(t, "record time") > n) throw DomainError("record time beyond the horizon");
        if (!std::is_sorted(record_times.begin(), record_times.end()))
            throw PreconditionError("record times must be nondecreasing");
    }
};

// Explicit-scheme step control: flagged, never enforced.
struct StabilityReport {
    bool rate_guard = false;                 // dt * max_rate > 0.2
    std::size_t coefficient_guard_steps = 0; // steps with dt * gamma * max_i u(i) v(i) > 0.1
    std::size_t clamp_events = 0;            // site updates clamped at zero

    void merge(const StabilityReport& o) {
        rate_guard = rate_guard || o.rate_guard;
        coefficient_guard_steps += o.coefficient_guard_steps;
        clamp_events += o.clamp_events;
    }
};

namespace detail {

struct StepScratch {
    std::vector<double> au;
    std::vector<double> av;
};

inline void check_field(const FieldPair& f, std::size_t n) {
    if (f.u.size() != n || f.v.size() != n) throw PreconditionError("field length does not match number of sites");
}

} // namespace detail

// One Euler-Maruyama step into `out`. The diffusion coefficient sqrt(gamma *
// max(0, u v)) is evaluated once per site and shared by both components, and
// each component is clamped at zero.
inline void em_step_into(const FieldPair& state, FieldPair& out, const MigrationKernel& kernel, double gamma,
                         double dt, std::span<const NoisePair> increments, std::size_t step,
                         StabilityReport* report, detail::StepScratch& scratch) {
    const std::size_t n = kernel.size();
    scratch.au.resize(n);
    scratch.av.resize(n);
    out.u.resize(n);
    out.v.resize(n);
    kernel.apply(state.u, scratch.au);
    kernel.apply(state.v, scratch.av);
    double max_uv = 0.0;
    std::size_t clamps = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double uv = std::max(0.0, state.u[i] * state.v[i]);
        max_uv = std::max(max_uv, uv);
        const double coef = std::sqrt(gamma * uv);
        double nu = state.u[i] + scratch.au[i] * dt + coef * increments[i].d1;
        double nv = state.v[i] + scratch.av[i] * dt + coef * increments[i].d2;
        if (!std::isfinite(nu) || !std::isfinite(nv)) throw NumericalBlowup(i, step);
        if (nu < 0.0) {
            nu = 0.0;
            ++clamps;
        }
        if (nv < 0.0) {
            nv = 0.0;
            ++clamps;
        }
        out.u[i] = nu;
        out.v[i] = nv;
    }
    if (report) {
        if (dt * gamma * max_uv > 0.1) ++report->coefficient_guard_steps;
        report->clamp_events += clamps;
    }
}

inline FieldPair em_step(const FieldPair& state, const MigrationKernel& kernel, const ModelParams& params,
                         std::span<const NoisePair> increments, std::size_t step = 0,
                         StabilityReport* report = nullptr) {
    detail::check_field(state, kernel.size());
    if (std::isinf(params.gamma)) throw PreconditionError("em_step requires finite gamma");
    if (increments.size() != kernel.size()) throw PreconditionError("one increment pair per site is required");
    if (!(params.dt > 0.0)) throw DomainError("dt must be positive");
    for (std::size_t i = 0; i < state.size(); ++i)
        if (!std::isfinite(state.u[i]) || !std::isfinite(state.v[i])) throw NumericalBlowup(i, step);
    FieldPair out;
    detail::StepScratch scratch;
    em_step_into(state, out, kernel, params.gamma, params.dt, increments, step, report, scratch);
    return out;
}

// Per-replica observables at one record time.
struct MassRecord {
    double time = 0.0;
    double mass_u = 0.0;
    double mass_v = 0.0;
    double product = 0.0;  // M_t = <u_t,1><v_t,1>
    double int_uv = 0.0;   // int_0^t <u_s, v_s> ds, trapezoid on the step grid
    double qv_u = 0.0;     // realized sum of squared mass increments
    double qv_v = 0.0;
    double cv = 0.0;       // realized sum of dU dV
    double clock = 0.0;    // gamma * int_uv, the bracket that drives the time change
    double sup_mass_u = 0.0;
    double sup_mass_v = 0.0;
};

struct EnsembleOptions {
    std::vector<std::pair<std::size_t, std::size_t>> pairs; // tracked products u(a) v(b)
    bool all_pairs = false;
    bool keep_snapshots = false;
    unsigned threads = 0;
};

struct EnsembleResult {
    ModelParams params;
    std::size_t sites = 0;
    FieldPair initial;
    std::vector<std::size_t> record_steps;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<MassRecord> masses;   // [replica][record]
    std::vector<double> products;     // [replica][record][pair]
    std::vector<double> site_u;       // [replica][record][site]
    std::vector<double> site_v;
    std::vector<FieldPair> snapshots; // [replica][record] when requested
    StabilityReport stability;

    std::size_t records() const noexcept { return record_steps.size(); }

    std::size_t record_index(double t) const {
        const std::size_t k = params.grid_index(t);
        for (std::size_t r = 0; r < record_steps.size(); ++r)
            if (record_steps[r] == k) return r;
        throw DomainError("time " + std::to_string(t) + " is not on the record grid");
    }

    const MassRecord& mass(std::size_t replica, std::size_t r) const { return masses[replica * records() + r]; }

    std::size_t pair_index(std::size_t a, std::size_t b) const {
        for (std::size_t p = 0; p < pairs.size(); ++p)
            if (pairs[p].first == a && pairs[p].second == b) return p;
        throw PreconditionError("pair (" + std::to_string(a) + "," + std::to_string(b) + ") was not tracked");
    }
};

namespace detail {

// Shared replica driver. `make_stepper(replica)` returns a callable
// `(step, in, out, report)` advancing that replica by one dt; recording,
// brackets and the result layout are common to the finite- and
// infinite-rate schemes.
template <class StepperFactory>
EnsembleResult run_ensemble(const MigrationKernel& kernel, const ModelParams& params, const FieldPair& initial,
                            const EnsembleOptions& options, StepperFactory&& make_stepper) {
    const std::size_t n = kernel.size();
    check_field(initial, n);
    for (std::size_t i = 0; i < n; ++i)
        if (!(initial.u[i] >= 0.0) || !(initial.v[i] >= 0.0) || !std::isfinite(initial.u[i]) ||
            !std::isfinite(initial.v[i]))
            throw PreconditionError("initial fields must be finite and nonnegative");

    EnsembleResult res;
    res.params = params;
    res.sites = n;
    res.initial = initial;
    for (double t : params.record_times) res.record_steps.push_back(params.grid_index(t));
    if (options.all_pairs) {
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) res.pairs.emplace_back(a, b);
    } else {
        for (const auto& [a, b] : options.pairs) {
            kernel.check_site(a);
            kernel.check_site(b);
            res.pairs.emplace_back(a, b);
        }
    }
    const std::size_t R = res.records();
    const std::size_t P = res.pairs.size();
    const std::size_t reps = params.replicas;
    res.masses.resize(reps * R);
    res.products.resize(reps * R * P);
    res.site_u.resize(reps * R * n);
    res.site_v.resize(reps * R * n);
    if (options.keep_snapshots) res.snapshots.resize(reps * R);
    std::vector<StabilityReport> reports(reps);
    const std::size_t total_steps = params.steps();
    const double dt = params.dt;

    parallel_for(
        reps,
        [&](std::size_t rep) {
            auto stepper = make_stepper(rep);
            FieldPair cur = initial;
            FieldPair next;
            StabilityReport& report = reports[rep];
            MassRecord acc;
            acc.mass_u = cur.mass_u();
            acc.mass_v = cur.mass_v();
            acc.sup_mass_u = acc.mass_u;
            acc.sup_mass_v = acc.mass_v;
            double uv_prev = 0.0;
            for (std::size_t i = 0; i < n; ++i) uv_prev += cur.u[i] * cur.v[i];
            std::size_t r = 0;
            auto record = [&](std::size_t step) {
                while (r < R && res.record_steps[r] == step) {
                    MassRecord m = acc;
                    m.time = static_cast<double>(step) * dt;
                    m.product = m.mass_u * m.mass_v;
                    m.clock = std::isinf(params.gamma) ? 0.0 : params.gamma * m.int_uv;
                    const std::size_t slot = rep * R + r;
                    res.masses[slot] = m;
                    for (std::size_t p = 0; p < P; ++p)
                        res.products[slot * P + p] = cur.u[res.pairs[p].first] * cur.v[res.pairs[p].second];
                    std::copy(cur.u.begin(), cur.u.end(), res.site_u.begin() + static_cast<std::ptrdiff_t>(slot * n));
                    std::copy(cur.v.begin(), cur.v.end(), res.site_v.begin() + static_cast<std::ptrdiff_t>(slot * n));
                    if (options.keep_snapshots) res.snapshots[slot] = cur;
                    ++r;
                }
            };
            record(0);
            for (std::size_t step = 1; step <= total_steps && r < R; ++step) {
                try {
                    stepper(step, cur, next, report);
                } catch (const NumericalBlowup& e) {
                    throw e.with_replica(rep);
                }
                const double mu = next.mass_u();
                const double mv = next.mass_v();
                const double du = mu - acc.mass_u;
                const double dv = mv - acc.mass_v;
                double uv = 0.0;
                for (std::size_t i = 0; i < n; ++i) uv += next.u[i] * next.v[i];
                acc.qv_u += du * du;
                acc.qv_v += dv * dv;
                acc.cv += du * dv;
                acc.int_uv += 0.5 * dt * (uv_prev + uv);
                acc.mass_u = mu;
                acc.mass_v = mv;
                acc.sup_mass_u = std::max(acc.sup_mass_u, mu);
                acc.sup_mass_v = std::max(acc.sup_mass_v, mv);
                uv_prev = uv;
                cur.u.swap(next.u);
                cur.v.swap(next.v);
                record(step);
            }
        },
        options.threads);

    if (dt * kernel.max_rate() > 0.2) res.stability.rate_guard = true;
    for (const auto& rep : reports) res.stability.merge(rep);
    return res;
}

} // namespace detail

// Runs params.replicas independent trajectories; replica r is driven by
// NoiseStream(seed, r, rho). Deterministic given the seed and independent of
// the thread count.
inline EnsembleResult simulate_ensemble(const MigrationKernel& kernel, const ModelParams& params,
                                        const FieldPair& initial, const EnsembleOptions& options = {}) {
    params.validate(false);
    const std::size_t n = kernel.size();
    return detail::run_ensemble(kernel, params, initial, options, [&params, &kernel, n](std::size_t rep) {
        return [&params, &kernel, stream = NoiseStream(params.seed, rep, params.rho),
                incs = std::vector<NoisePair>(n), scratch = detail::StepScratch{}](
                   std::size_t step, const FieldPair& in, FieldPair& out, StabilityReport& report) mutable {
            stream.sample_into(params.dt, incs);
            em_step_into(in, out, kernel, params.gamma, params.dt, incs, step, &report, scratch);
        };
    });
}

// ---------------------------------------------------------------------------
// Ensemble statistics

struct MassStatistics {
    double time = 0.0;
    Estimate mass_u;
    Estimate mass_v;
    Estimate product;
    Estimate int_uv;
};

template <class Fn>
Estimate record_statistic(const EnsembleResult& res, std::size_t r, Fn&& fn) {
    std::vector<double> x(res.params.replicas);
    for (std::size_t rep = 0; rep < x.size(); ++rep) x[rep] = fn(res.mass(rep, r));
    return summarize(x);
}

inline std::vector<MassStatistics> mass_statistics(const EnsembleResult& res) {
    std::vector<MassStatistics> out;
    for (std::size_t r = 0; r < res.records(); ++r) {
        MassStatistics s;
        s.time = static_cast<double>(res.record_steps[r]) * res.params.dt;
        s.mass_u = record_statistic(res, r, [](const MassRecord& m) { return m.mass_u; });
        s.mass_v = record_statistic(res, r, [](const MassRecord& m) { return m.mass_v; });
        s.product = record_statistic(res, r, [](const MassRecord& m) { return m.product; });
        s.int_uv = record_statistic(res, r, [](const MassRecord& m) { return m.int_uv; });
        out.push_back(s);
    }
    return out;
}

// Ensemble mean of u_t(a) v_t(b) with its standard error.
inline Estimate second_moment_estimate(const EnsembleResult& res, std::size_t a, std::size_t b, double t) {
    const std::size_t r = res.record_index(t);
    const std::size_t p = res.pair_index(a, b);
    const std::size_t R = res.records();
    const std::size_t P = res.pairs.size();
    std::vector<double> x(res.params.replicas);
    for (std::size_t rep = 0; rep < x.size(); ++rep) x[rep] = res.products[(rep * R + r) * P + p];
    return summarize(x);
}

enum class Component { u, v };

inline Estimate first_moment_estimate(const EnsembleResult& res, std::size_t a, double t, Component c) {
    if (a >= res.sites) throw IndexError("site outside the site set");
    const std::size_t r = res.record_index(t);
    const std::size_t R = res.records();
    const auto& field = c == Component::u ? res.site_u : res.site_v;
    std::vector<double> x(res.params.replicas);
    for (std::size_t rep = 0; rep < x.size(); ++rep) x[rep] = field[(rep * R + r) * res.sites + a];
    return summarize(x);
}

struct CrossVariationRow {
    double time = 0.0;
    Estimate realized_cv;  // sum dU dV
    Estimate predicted_cv; // rho * gamma * int <u,v> ds
    double ratio_cv = 0.0;
    Estimate realized_qv_u;
    Estimate realized_qv_v;
    Estimate predicted_qv; // gamma * int <u,v> ds
    double ratio_qv_u = 0.0;
    double ratio_qv_v = 0.0;
};

inline double safe_ratio(double num, double den) {
    if (den == 0.0) return num == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    return num / den;
}

// Realized brackets of the two mass paths against the Ito predictions
// [U,V]_t = rho gamma int <u,v> and [U,U]_t = [V,V]_t = gamma int <u,v>.
inline std::vector<CrossVariationRow> cross_variation_report(const EnsembleResult& res) {
    const double rho = res.params.rho;
    const double gamma = res.params.gamma;
    if (std::isinf(gamma)) throw PreconditionError("bracket comparison requires finite gamma");
    std::vector<CrossVariationRow> out;
    for (std::size_t r = 0; r < res.records(); ++r) {
        CrossVariationRow row;
        row.time = static_cast<double>(res.record_steps[r]) * res.params.dt;
        row.realized_cv = record_statistic(res, r, [](const MassRecord& m) { return m.cv; });
        row.predicted_cv = record_statistic(res, r, [&](const MassRecord& m) { return rho * gamma * m.int_uv; });
        row.realized_qv_u = record_statistic(res, r, [](const MassRecord& m) { return m.qv_u; });
        row.realized_qv_v = record_statistic(res, r, [](const MassRecord& m) { return m.qv_v; });
        row.predicted_qv = record_statistic(res, r, [&](const MassRecord& m) { return gamma * m.int_uv; });
        row.ratio_cv = safe_ratio(row.realized_cv.mean, row.predicted_cv.mean);
        row.ratio_qv_u = safe_ratio(row.realized_qv_u.mean, row.predicted_qv.mean);
        row.ratio_qv_v = safe_ratio(row.realized_qv_v.mean, row.predicted_qv.mean);
        out.push_back(row);
    }
    return out;
}

// Ensemble p-th moment of <u_t,1> (or of its running supremum).
inline Estimate mass_moment(const EnsembleResult& res, double t, double p, bool running_sup = false,
                            Component c = Component::u) {
    const std::size_t r = res.record_index(t);
    return record_statistic(res, r, [&](const MassRecord& m) {
        const double x = c == Component::u ? (running_sup ? m.sup_mass_u : m.mass_u)
                                           : (running_sup ? m.sup_mass_v : m.mass_v);
        return std::pow(x, p);
    });
}

} // namespace symbranch
