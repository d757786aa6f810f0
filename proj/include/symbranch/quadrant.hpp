#pragma once

// Exit of rho-correlated planar Brownian motion from the open first quadrant,
// tail-exponent estimation and the uniform moment probe built on it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "migration.hpp"
#include "noise.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "sbm_sde.hpp"
#include "stats.hpp"

namespace symbranch {

struct ExitSample {
    std::pair<double, double> start;
    double tau = 0.0;
    std::pair<double, double> exit_point;
    double step_dt = 0.0;
    bool censored = false; // still inside at max_time; tau = max_time, exit_point = position there
};

// Spitzer exponent pi / (2 arccos(-rho)) of the correlated wedge.
inline double critical_moment_exponent(double rho) {
    if (!(rho > -1.0 && rho < 1.0)) throw DomainError("critical moment exponent requires |rho| < 1");
    return std::numbers::pi / (2.0 * std::acos(-rho));
}

namespace detail {

inline void check_start(std::pair<double, double> start) {
    if (!(start.first > 0.0) || !(start.second > 0.0) || !std::isfinite(start.first) || !std::isfinite(start.second))
        throw DomainError("exit start must lie strictly inside the first quadrant");
}

// Crossing of the segment p -> q (p inside, q outside) with the boundary,
// linearly interpolated; the crossing coordinate is set to exactly 0.
inline std::pair<double, std::pair<double, double>> interpolate_exit(double x0, double y0, double x1, double y1) {
    double theta = 1.0;
    bool x_first = true;
    if (x1 <= 0.0) theta = x0 / (x0 - x1);
    if (y1 <= 0.0) {
        const double ty = y0 / (y0 - y1);
        if (x1 > 0.0 || ty < theta) {
            theta = ty;
            x_first = false;
        }
    }
    theta = std::clamp(theta, 0.0, 1.0);
    double ex = x0 + theta * (x1 - x0);
    double ey = y0 + theta * (y1 - y0);
    if (x_first) {
        ex = 0.0;
        ey = std::max(ey, 0.0);
    } else {
        ey = 0.0;
        ex = std::max(ex, 0.0);
    }
    return {theta, {ex, ey}};
}

} // namespace detail

// Fixed-step simulation to the first boundary crossing. Boundary detection at
// step ends misses excursions inside a step, so tau carries an O(sqrt(dt))
// upward bias; it is measured by dt-halving, not corrected.
inline ExitSample sample_exit(double rho, std::pair<double, double> start, double dt, rng::CounterEngine& engine,
                              double max_time = std::numeric_limits<double>::infinity()) {
    check_correlation(rho);
    detail::check_start(start);
    if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("dt must be positive");
    const double s = std::sqrt(dt);
    const double c = std::sqrt(1.0 - rho * rho);
    double x = start.first;
    double y = start.second;
    ExitSample out;
    out.start = start;
    out.step_dt = dt;
    for (std::uint64_t k = 0;; ++k) {
        const double t = static_cast<double>(k) * dt;
        if (t >= max_time) {
            out.tau = max_time;
            out.exit_point = {x, y};
            out.censored = true;
            return out;
        }
        const auto [z1, z2] = engine.normal_pair();
        const double d1 = s * z1;
        const double nx = x + d1;
        const double ny = y + rho * d1 + c * (s * z2);
        if (nx <= 0.0 || ny <= 0.0) {
            const auto [theta, pt] = detail::interpolate_exit(x, y, nx, ny);
            out.tau = t + theta * dt;
            out.exit_point = pt;
            return out;
        }
        x = nx;
        y = ny;
    }
}

// Exit-point sampler with steps shrinking near the boundary: the step's
// standard deviation is at most `shrink` times the distance to the boundary
// and at most sqrt(max_dt). Each step also tests the Brownian-bridge crossing
// probability exp(-2 w w' / h) of both coordinates. With x = x0 + rho (y - y0)
// + sqrt(1 - rho^2) W and W independent of y, a crossing of {y = 0} is
// reported at (x - rho y + c theta dW, 0), which keeps both exit coordinates
// exact martingales whatever the interpolation weight theta. The corner case
// (both coordinates crossing in one step) is resolved by the earlier estimated
// crossing. Paths that reach distance `snap * (x + y)` are treated as crossing.
inline ExitSample resolve_exit(double rho, std::pair<double, double> start, double max_dt, rng::CounterEngine& engine,
                               double shrink = 0.5, double snap = 1e-12) {
    check_correlation(rho);
    detail::check_start(start);
    if (!(max_dt > 0.0) || !std::isfinite(max_dt)) throw DomainError("dt must be positive");
    const double c = std::sqrt(1.0 - rho * rho);
    double x = start.first;
    double y = start.second;
    const double floor = snap * (x + y);
    double t = 0.0;
    ExitSample out;
    out.start = start;
    out.step_dt = max_dt;
    // crossing weight along the step; a bridge crossing is placed at the
    // reflected endpoint's interpolation point
    auto weight = [](double w0, double w1) { return w0 / (w0 + std::abs(w1)); };
    auto crosses = [&engine](double w0, double w1, double h) {
        if (w1 <= 0.0) return true;
        const double a = 2.0 * w0 * w1 / h;
        return a < 40.0 && engine.uniform() <= std::exp(-a);
    };
    for (;;) {
        double h = 0.0;
        double d1 = 0.0;
        double dw = 0.0;
        bool cx = false;
        bool cy = false;
        const double m = std::min(x, y);
        if (m <= floor) {
            cx = x <= y;
            cy = !cx;
        } else {
            h = std::min(max_dt, (shrink * m) * (shrink * m));
            const double s = std::sqrt(h);
            const auto [z1, z2] = engine.normal_pair();
            d1 = s * z1;
            dw = s * z2;
            const double nx = x + d1;
            const double ny = y + rho * d1 + c * dw;
            cx = crosses(x, nx, h);
            cy = crosses(y, ny, h);
            if (!cx && !cy) {
                x = nx;
                y = ny;
                t += h;
                continue;
            }
            if (cx && cy) {
                if (weight(x, nx) <= weight(y, ny))
                    cy = false;
                else
                    cx = false;
            }
            const double theta = cx ? weight(x, nx) : weight(y, ny);
            h *= theta;
            d1 *= theta;
            dw *= theta;
        }
        out.tau = t + h;
        if (cy) // dW = c d1 - rho dw is the part of dx independent of dy
            out.exit_point = {std::max(0.0, x - rho * y + c * (c * d1 - rho * dw)), 0.0};
        else
            out.exit_point = {0.0, std::max(0.0, y - rho * x + c * dw)};
        return out;
    }
}

struct ExitBatch {
    double rho = 0.0;
    std::pair<double, double> start{1.0, 1.0};
    double dt = 1e-4;
    std::size_t samples = 1000;
    std::uint64_t seed = 0;
    double max_time = std::numeric_limits<double>::infinity();
    std::uint64_t tag = 0; // separates batches sharing a seed
    unsigned threads = 0;
};

inline std::vector<ExitSample> sample_exits(const ExitBatch& batch) {
    std::vector<ExitSample> out(batch.samples);
    parallel_for(
        batch.samples,
        [&](std::size_t k) {
            rng::CounterEngine engine(batch.seed, rng::Domain::quadrant_exit, k, batch.tag);
            out[k] = sample_exit(batch.rho, batch.start, batch.dt, engine, batch.max_time);
        },
        batch.threads);
    return out;
}

struct TailFit {
    double exponent = 0.0; // minus the fitted log-log survival slope
    double intercept = 0.0;
    std::size_t points = 0;
    std::size_t censored = 0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

namespace detail {

// OLS slope of log S(tau_(k)) on log tau_(k) over the top `fraction` of the
// sample. Censored values all sit at the common cap above every exit time, so
// they enter only through n; survival at the k-th order statistic (1-based) is
// plotted at (n - k + 0.5) / n.
inline TailFit fit_sorted(const std::vector<double>& exits, std::size_t n, double fraction) {
    TailFit f;
    const auto top = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    std::vector<double> lx;
    std::vector<double> ly;
    for (std::size_t k = n - top + 1; k <= exits.size(); ++k) {
        const double tau = exits[k - 1];
        if (!(tau > 0.0)) continue;
        lx.push_back(std::log(tau));
        ly.push_back(std::log((static_cast<double>(n - k) + 0.5) / static_cast<double>(n)));
    }
    f.points = lx.size();
    f.censored = n - exits.size();
    if (lx.size() < 3) throw PreconditionError("too few uncensored tail points for a regression");
    const double mx = pairwise_sum(lx) / static_cast<double>(lx.size());
    const double my = pairwise_sum(ly) / static_cast<double>(ly.size());
    std::vector<double> sxy(lx.size());
    std::vector<double> sxx(lx.size());
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy[i] = (lx[i] - mx) * (ly[i] - my);
        sxx[i] = (lx[i] - mx) * (lx[i] - mx);
    }
    const double slope = pairwise_sum(sxy) / pairwise_sum(sxx);
    f.exponent = -slope;
    f.intercept = my - slope * mx;
    return f;
}

inline std::vector<double> sorted_exits(const std::vector<double>& tau, const std::vector<char>& censored) {
    std::vector<double> e;
    for (std::size_t i = 0; i < tau.size(); ++i)
        if (!censored[i]) e.push_back(tau[i]);
    std::sort(e.begin(), e.end());
    return e;
}

} // namespace detail

// Tail exponent with a percentile bootstrap interval.
inline TailFit fit_tail_exponent(const std::vector<ExitSample>& samples, double fraction = 0.1,
                                 std::size_t bootstrap = 200, std::uint64_t seed = 0, double level = 0.95) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw DomainError("tail fraction must lie in (0, 1]");
    const std::size_t n = samples.size();
    std::vector<double> tau(n);
    std::vector<char> cens(n);
    for (std::size_t i = 0; i < n; ++i) {
        tau[i] = samples[i].tau;
        cens[i] = samples[i].censored ? 1 : 0;
    }
    TailFit fit = detail::fit_sorted(detail::sorted_exits(tau, cens), n, fraction);
    fit.ci_low = fit.ci_high = fit.exponent;
    if (bootstrap == 0) return fit;
    std::vector<double> boot(bootstrap);
    std::vector<double> bt(n);
    std::vector<char> bc(n);
    for (std::size_t r = 0; r < bootstrap; ++r) {
        rng::CounterEngine engine(seed, rng::Domain::bootstrap, r);
        for (std::size_t i = 0; i < n; ++i) {
            const auto k = std::min(n - 1, static_cast<std::size_t>(engine.uniform() * static_cast<double>(n)));
            bt[i] = tau[k];
            bc[i] = cens[k];
        }
        boot[r] = detail::fit_sorted(detail::sorted_exits(bt, bc), n, fraction).exponent;
    }
    std::sort(boot.begin(), boot.end());
    const double alpha = 0.5 * (1.0 - level);
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(bootstrap - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, bootstrap - 1);
        return boot[lo] + (pos - static_cast<double>(lo)) * (boot[hi] - boot[lo]);
    };
    fit.ci_low = quantile(alpha);
    fit.ci_high = quantile(1.0 - alpha);
    return fit;
}

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

// Two-sample Kolmogorov-Smirnov test with the asymptotic Kolmogorov p-value
// (Stephens' small-sample correction of the argument).
inline KsResult ks_two_sample(std::vector<double> x, std::vector<double> y) {
    if (x.empty() || y.empty()) throw PreconditionError("KS test needs two nonempty samples");
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const double nx = static_cast<double>(x.size());
    const double ny = static_cast<double>(y.size());
    std::size_t i = 0;
    std::size_t j = 0;
    double d = 0.0;
    while (i < x.size() && j < y.size()) {
        const double v = std::min(x[i], y[j]);
        while (i < x.size() && x[i] == v) ++i;
        while (j < y.size() && y[j] == v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
    }
    const double ne = nx * ny / (nx + ny);
    const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
    double p = 0.0;
    if (lambda < 0.2) {
        p = 1.0;
    } else {
        for (int k = 1; k <= 100; ++k) {
            const double term = std::exp(-2.0 * k * k * lambda * lambda);
            p += (k % 2 == 1 ? 2.0 : -2.0) * term;
            if (term < 1e-16) break;
        }
        p = std::clamp(p, 0.0, 1.0);
    }
    return {d, p};
}

struct MomentProbeRow {
    double gamma = 0.0;
    double time = 0.0;
    Estimate sup_mass_moment; // E[sup_{s<=t} <u_s,1>^{2+eps}]
    Estimate mass_moment;     // E[<u_t,1>^{2+eps}]
};

struct MomentProbeReport {
    double rho = 0.0;
    double epsilon = 0.0;
    double p_star = 0.0;
    std::vector<MomentProbeRow> rows;
    Estimate exit_moment;             // E[tau^{(2+eps)/2}] from (<u0,1>, <v0,1>), capped at max_time
    std::size_t exit_censored = 0;
    double growth_ratio = 0.0;        // sup-mass moment at the largest gamma over the smallest, final time
    bool growth_flag = false;         // growth_ratio above the threshold
    std::vector<StabilityReport> stability;
};

struct MomentProbeOptions {
    double epsilon = 0.1;
    std::size_t exit_samples = 10000;
    double exit_dt = 1e-3;
    double exit_max_time = 1e3;
    double growth_threshold = 10.0;
};

inline void check_probe_admissible(double rho, double epsilon) {
    if (!(rho < 0.0)) throw PreconditionError("the uniform moment probe requires rho < 0");
    if (!(epsilon > 0.0)) throw PreconditionError("epsilon must be positive");
    const double ps = critical_moment_exponent(rho);
    if (!((2.0 + epsilon) / 2.0 < ps))
        throw PreconditionError("epsilon = " + std::to_string(epsilon) + " violates (2+eps)/2 < p* = " +
                                std::to_string(ps) + "; admissible range is 0 < eps < " + std::to_string(2.0 * ps - 2.0));
}

inline MomentProbeReport moment_bound_probe(double rho, const std::vector<double>& gamma_list,
                                            const MigrationKernel& kernel, ModelParams params,
                                            const FieldPair& initial, const MomentProbeOptions& opt = {}) {
    check_probe_admissible(rho, opt.epsilon);
    if (gamma_list.empty()) throw PreconditionError("gamma list must be nonempty");
    MomentProbeReport rep;
    rep.rho = rho;
    rep.epsilon = opt.epsilon;
    rep.p_star = critical_moment_exponent(rho);
    params.rho = rho;
    const double p = 2.0 + opt.epsilon;
    std::vector<double> final_moment;
    for (double g : gamma_list) {
        params.gamma = g;
        const EnsembleResult res = simulate_ensemble(kernel, params, initial);
        rep.stability.push_back(res.stability);
        for (double t : params.record_times) {
            MomentProbeRow row;
            row.gamma = g;
            row.time = t;
            row.sup_mass_moment = mass_moment(res, t, p, true);
            row.mass_moment = mass_moment(res, t, p, false);
            rep.rows.push_back(row);
        }
        final_moment.push_back(rep.rows.back().sup_mass_moment.mean);
    }
    rep.growth_ratio = final_moment.back() / final_moment.front();
    rep.growth_flag = !(rep.growth_ratio <= opt.growth_threshold);

    ExitBatch batch;
    batch.rho = rho;
    batch.start = {initial.mass_u(), initial.mass_v()};
    batch.dt = opt.exit_dt;
    batch.samples = opt.exit_samples;
    batch.seed = params.seed;
    batch.max_time = opt.exit_max_time;
    const auto exits = sample_exits(batch);
    std::vector<double> m(exits.size());
    for (std::size_t i = 0; i < exits.size(); ++i) {
        m[i] = std::pow(exits[i].tau, p / 2.0);
        rep.exit_censored += exits[i].censored ? 1 : 0;
    }
    rep.exit_moment = summarize(m);
    return rep;
}

} // namespace symbranch
