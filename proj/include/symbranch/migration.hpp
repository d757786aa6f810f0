#pragma once

// Migration operator as a finite symmetric Q-matrix, with its semigroup,
// Green and log-Green functions and recurrence diagnostics.

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
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "uniformization.hpp"

namespace symbranch {

enum class KernelFamily { torus_laplacian, complete_graph, single_site, custom };

enum class RecurrenceFlag { recurrent, transient, unknown };

inline std::string to_string(KernelFamily f) {
    switch (f) {
    case KernelFamily::torus_laplacian: return "torus_laplacian";
    case KernelFamily::complete_graph: return "complete_graph";
    case KernelFamily::single_site: return "single_site";
    case KernelFamily::custom: return "custom";
    }
    return "custom";
}

inline std::string to_string(RecurrenceFlag f) {
    switch (f) {
    case RecurrenceFlag::recurrent: return "recurrent";
    case RecurrenceFlag::transient: return "transient";
    case RecurrenceFlag::unknown: return "unknown";
    }
    return "unknown";
}

struct Neighbor {
    std::uint32_t site;
    double rate;
};

class MigrationKernel {
public:
    // Nearest-neighbour walk on (Z / side Z)^d with rate 1/(2d) to each of the
    // 2d neighbours, i.e. the discrete Laplacian with periodic boundary.
    static MigrationKernel torus_laplacian(int d, int side) {
        if (d < 1) throw DomainError("torus dimension must be >= 1");
        if (side < 2) throw DomainError("torus side must be >= 2");
        std::size_t n = 1;
        for (int k = 0; k < d; ++k) {
            n *= static_cast<std::size_t>(side);
            if (n > (std::size_t{1} << 31)) throw DomainError("torus too large");
        }
        const double r = 1.0 / (2.0 * d);
        std::vector<std::vector<Neighbor>> adj(n);
        std::vector<int> coord(static_cast<std::size_t>(d));
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t rem = i;
            for (int k = 0; k < d; ++k) {
                coord[static_cast<std::size_t>(k)] = static_cast<int>(rem % static_cast<std::size_t>(side));
                rem /= static_cast<std::size_t>(side);
            }
            std::size_t stride = 1;
            for (int k = 0; k < d; ++k) {
                const int c = coord[static_cast<std::size_t>(k)];
                for (int s : {-1, 1}) {
                    const int cn = (c + s + side) % side;
                    const std::size_t j = i + (static_cast<std::size_t>(cn) - static_cast<std::size_t>(c)) * stride;
                    add_rate(adj[i], static_cast<std::uint32_t>(j), r);
                }
                stride *= static_cast<std::size_t>(side);
            }
        }
        MigrationKernel k(std::move(adj), KernelFamily::torus_laplacian);
        k.dim_ = d;
        k.side_ = side;
        k.flag_ = d <= 2 ? RecurrenceFlag::recurrent : RecurrenceFlag::transient;
        return k;
    }

    // a(i,j) = 1/n for i != j.
    static MigrationKernel complete_graph(std::size_t n) {
        if (n < 1) throw DomainError("complete graph needs at least one site");
        if (n > 4096) throw DomainError("complete graph too large");
        const double r = 1.0 / static_cast<double>(n);
        std::vector<std::vector<Neighbor>> adj(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) adj[i].push_back({static_cast<std::uint32_t>(j), r});
        MigrationKernel k(std::move(adj), KernelFamily::complete_graph);
        k.flag_ = RecurrenceFlag::recurrent;
        return k;
    }

    static MigrationKernel single_site() {
        MigrationKernel k(std::vector<std::vector<Neighbor>>(1), KernelFamily::single_site);
        k.flag_ = RecurrenceFlag::recurrent;
        return k;
    }

    // Full rate matrix. Off-diagonal entries must be nonnegative and symmetric
    // to 1e-12 (relative); they are symmetrized exactly. A supplied diagonal
    // must equal minus the off-diagonal row sum to 1e-12 and is then recomputed.
    static MigrationKernel custom(const std::vector<std::vector<double>>& rates) {
        const std::size_t n = rates.size();
        if (n == 0) throw DomainError("custom kernel needs at least one site");
        for (const auto& row : rates)
            if (row.size() != n) throw DomainError("custom rate matrix must be square");
        double scale = 0.0;
        for (const auto& row : rates)
            for (double v : row) {
                if (!std::isfinite(v)) throw DomainError("custom rates must be finite");
                scale = std::max(scale, std::abs(v));
            }
        const double tol = 1e-12 * std::max(1.0, scale);
        std::vector<std::vector<Neighbor>> adj(n);
        for (std::size_t i = 0; i < n; ++i) {
            double row_sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double a = rates[i][j];
                const double b = rates[j][i];
                if (a < 0.0) throw DomainError("off-diagonal rates must be nonnegative");
                if (std::abs(a - b) > tol) throw DomainError("custom rate matrix is not symmetric");
                const double sym = i < j ? 0.5 * (a + b) : 0.5 * (b + a);
                if (sym > 0.0) adj[i].push_back({static_cast<std::uint32_t>(j), sym});
                row_sum += a;
            }
            if (std::abs(rates[i][i] + row_sum) > tol)
                throw DomainError("diagonal entry " + std::to_string(i) + " does not make the row sum vanish");
        }
        MigrationKernel k(std::move(adj), KernelFamily::custom);
        k.flag_ = RecurrenceFlag::unknown;
        return k;
    }

    std::size_t size() const noexcept { return adj_.size(); }
    KernelFamily family() const noexcept { return family_; }
    RecurrenceFlag recurrence_flag() const noexcept { return flag_; }
    int dimension() const noexcept { return dim_; }
    int side() const noexcept { return side_; }

    std::span<const Neighbor> neighbors(std::size_t i) const { return adj_.at(i); }
    double diagonal(std::size_t i) const { return gen_.diag.at(i); }

    double rate(std::size_t i, std::size_t j) const {
        check_site(i);
        check_site(j);
        if (i == j) return gen_.diag[i];
        for (const auto& nb : adj_[i])
            if (nb.site == j) return nb.rate;
        return 0.0;
    }

    // sup_i |a(i,i)|
    double max_rate() const noexcept {
        double m = 0.0;
        for (double d : gen_.diag) m = std::max(m, -d);
        return m;
    }

    // out = A w
    void apply(std::span<const double> w, std::span<double> out) const { gen_.apply(w, out); }

    const SparseGenerator& generator() const noexcept { return gen_; }

    Eigen::MatrixXd dense() const {
        if (size() > 4096) throw PreconditionError("kernel too large for a dense matrix");
        const auto n = static_cast<Eigen::Index>(size());
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
        for (std::size_t i = 0; i < size(); ++i) {
            a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = gen_.diag[i];
            for (const auto& nb : adj_[i])
                a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(nb.site)) = nb.rate;
        }
        return a;
    }

    void check_site(std::size_t i) const {
        if (i >= size())
            throw IndexError("site index " + std::to_string(i) + " outside [0, " + std::to_string(size()) + ")");
    }

    std::string site_label(std::size_t i) const {
        check_site(i);
        if (family_ == KernelFamily::single_site) return "s";
        return std::to_string(i);
    }

    // Parses a site given either as an index or as its label.
    std::size_t parse_site(const std::string& label) const {
        if (family_ == KernelFamily::single_site && label == "s") return 0;
        std::size_t pos = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(label, &pos);
        } catch (const std::exception&) {
            throw IndexError("unknown site label '" + label + "'");
        }
        if (pos != label.size()) throw IndexError("unknown site label '" + label + "'");
        check_site(static_cast<std::size_t>(v));
        return static_cast<std::size_t>(v);
    }

    // Site index of a torus coordinate vector.
    std::size_t torus_site(std::span<const int> coord) const {
        if (family_ != KernelFamily::torus_laplacian || coord.size() != static_cast<std::size_t>(dim_))
            throw PreconditionError("torus coordinates require a torus kernel of matching dimension");
        std::size_t idx = 0;
        std::size_t stride = 1;
        for (int c : coord) {
            idx += static_cast<std::size_t>(((c % side_) + side_) % side_) * stride;
            stride *= static_cast<std::size_t>(side_);
        }
        return idx;
    }

    nlohmann::json describe() const {
        nlohmann::json j{{"family", to_string(family_)},
                         {"sites", size()},
                         {"max_rate", max_rate()},
                         {"recurrence_flag", to_string(flag_)}};
        if (family_ == KernelFamily::torus_laplacian) {
            j["d"] = dim_;
            j["side"] = side_;
        }
        return j;
    }

private:
    MigrationKernel(std::vector<std::vector<Neighbor>> adj, KernelFamily family)
        : adj_(std::move(adj)), family_(family) {
        for (auto& row : adj_)
            std::sort(row.begin(), row.end(), [](const Neighbor& a, const Neighbor& b) { return a.site < b.site; });
        gen_.n = adj_.size();
        gen_.row_ptr.assign(1, 0);
        gen_.diag.assign(adj_.size(), 0.0);
        for (std::size_t i = 0; i < adj_.size(); ++i) {
            double s = 0.0;
            for (const auto& nb : adj_[i]) {
                gen_.col.push_back(nb.site);
                gen_.rate.push_back(nb.rate);
                s += nb.rate;
            }
            gen_.diag[i] = -s;
            gen_.row_ptr.push_back(gen_.col.size());
        }
    }

    static void add_rate(std::vector<Neighbor>& row, std::uint32_t j, double r) {
        for (auto& nb : row)
            if (nb.site == j) {
                nb.rate += r;
                return;
            }
        row.push_back({j, r});
    }

    std::vector<std::vector<Neighbor>> adj_;
    KernelFamily family_;
    RecurrenceFlag flag_ = RecurrenceFlag::unknown;
    int dim_ = 0;
    int side_ = 0;
    SparseGenerator gen_;
};

// {"family": "torus_laplacian", "d": 2, "side": 31}, {"family": "complete_graph", "n": 5},
// {"family": "single_site"} or {"family": "custom", "rates": [[...], ...]}.
inline MigrationKernel kernel_from_json(const nlohmann::json& spec, const std::string& path = "kernel") {
    if (!spec.is_object()) throw UsageError(path, "kernel specification must be an object");
    if (!spec.contains("family") || !spec["family"].is_string()) throw UsageError(path + ".family", "missing family");
    const std::string family = spec["family"].get<std::string>();
    auto int_field = [&](const char* name) {
        if (!spec.contains(name) || !spec[name].is_number_integer())
            throw UsageError(path + "." + name, "integer field required");
        return spec[name].get<long long>();
    };
    if (family == "torus_laplacian") {
        const long long d = int_field("d");
        const long long side = int_field("side");
        try {
            return MigrationKernel::torus_laplacian(static_cast<int>(d), static_cast<int>(side));
        } catch (const DomainError& e) {
            throw UsageError(path, e.what());
        }
    }
    if (family == "complete_graph") {
        const long long n = int_field("n");
        if (n < 1) throw UsageError(path + ".n", "must be positive");
        return MigrationKernel::complete_graph(static_cast<std::size_t>(n));
    }
    if (family == "single_site") return MigrationKernel::single_site();
    if (family == "custom") {
        if (!spec.contains("rates") || !spec["rates"].is_array()) throw UsageError(path + ".rates", "matrix required");
        std::vector<std::vector<double>> rates;
        try {
            rates = spec["rates"].get<std::vector<std::vector<double>>>();
        } catch (const nlohmann::json::exception&) {
            throw UsageError(path + ".rates", "rates must be a matrix of numbers");
        }
        try {
            return MigrationKernel::custom(rates);
        } catch (const DomainError& e) {
            throw UsageError(path + ".rates", e.what());
        }
    }
    throw UsageError(path + ".family", "unknown family '" + family + "'");
}

// ---------------------------------------------------------------------------
// Semigroup

inline constexpr double kSeriesTolerance = 1e-12;
inline constexpr double kQuadratureTolerance = 1e-8;

namespace detail {

inline void check_time(double t, const char* what) {
    if (!std::isfinite(t)) throw DomainError(std::string(what) + " must be finite");
    if (t < 0.0) throw DomainError(std::string(what) + " must be nonnegative");
}

inline std::vector<double> unit_vector(std::size_t n, std::size_t k) {
    std::vector<double> e(n, 0.0);
    e[k] = 1.0;
    return e;
}

} // namespace detail

// (P_t f)(i) = sum_j p_t(i,j) f(j)
inline std::vector<double> propagate(const MigrationKernel& kernel, double t, std::vector<double> f,
                                     double tolerance = kSeriesTolerance) {
    detail::check_time(t, "time");
    if (f.size() != kernel.size()) throw PreconditionError("vector length does not match number of sites");
    return expm_apply(kernel.generator(), t, std::move(f), {tolerance, nullptr});
}

// Row p_t(i, .); equal to the column by symmetry.
inline std::vector<double> transition_row(const MigrationKernel& kernel, double t, std::size_t i,
                                          double tolerance = kSeriesTolerance) {
    kernel.check_site(i);
    return propagate(kernel, t, detail::unit_vector(kernel.size(), i), tolerance);
}

// p_t(i,j) by uniformization with Poisson tail mass <= tolerance. The pair is
// evaluated in canonical order so the result is exactly symmetric.
inline double transition_probability(const MigrationKernel& kernel, double t, std::size_t i, std::size_t j,
                                     double tolerance = kSeriesTolerance) {
    kernel.check_site(i);
    kernel.check_site(j);
    detail::check_time(t, "time");
    if (i > j) std::swap(i, j);
    return transition_row(kernel, t, j, tolerance)[i];
}

// Dense cross-check: exp(tA) by Eigen's scaling-and-squaring Pade, N <= 64.
inline Eigen::MatrixXd dense_semigroup(const MigrationKernel& kernel, double t) {
    detail::check_time(t, "time");
    if (kernel.size() > 64) throw PreconditionError("dense semigroup limited to 64 sites");
    const Eigen::MatrixXd a = kernel.dense() * t;
    return a.exp();
}

struct SemigroupTable {
    std::string kernel_id;
    std::size_t sites = 0;
    std::vector<double> times;
    std::vector<std::vector<double>> probs; // probs[k][i * sites + j] = p_{times[k]}(i,j)
    double method_tolerance = kSeriesTolerance;

    double at(std::size_t k, std::size_t i, std::size_t j) const { return probs.at(k).at(i * sites + j); }
};

inline SemigroupTable make_semigroup_table(const MigrationKernel& kernel, std::vector<double> times,
                                           double tolerance = kSeriesTolerance) {
    if (kernel.size() > 2048) throw PreconditionError("semigroup table limited to 2048 sites");
    SemigroupTable table;
    table.kernel_id = kernel.describe().dump();
    table.sites = kernel.size();
    table.method_tolerance = tolerance;
    const std::size_t n = kernel.size();
    for (double t : times) {
        detail::check_time(t, "time");
        std::vector<double> p(n * n);
        for (std::size_t j = 0; j < n; ++j) {
            const auto col = transition_row(kernel, t, j, tolerance);
            for (std::size_t i = 0; i < n; ++i) p[i * n + j] = col[i];
        }
        // Mirror the upper triangle so the stored matrix is symmetric bit for bit.
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) p[j * n + i] = p[i * n + j];
        table.probs.push_back(std::move(p));
    }
    table.times = std::move(times);
    return table;
}

// ---------------------------------------------------------------------------
// Green functions

// g_T(j,k) = int_0^T p_s(j,k) ds, from the integrated uniformization series
// (truncation error well below 1e-8).
inline double green_function(const MigrationKernel& kernel, double horizon, std::size_t j, std::size_t k) {
    kernel.check_site(j);
    kernel.check_site(k);
    detail::check_time(horizon, "horizon");
    if (j > k) std::swap(j, k);
    const auto g = integrated_expm_apply(kernel.generator(), horizon, detail::unit_vector(kernel.size(), k),
                                         kSeriesTolerance);
    return g[j];
}

// g_T(j,j) for every site.
inline std::vector<double> green_diagonal(const MigrationKernel& kernel, double horizon) {
    std::vector<double> out(kernel.size());
    for (std::size_t j = 0; j < kernel.size(); ++j) out[j] = green_function(kernel, horizon, j, j);
    return out;
}

// int_0^T p_s(j,k) (1 + |log p_s(j,k)|) ds, integrand 0 where p vanishes.
// Evaluated as g_T(j,k) + int_0^T p |log p| ds; the second integral has a
// nonnegative integrand and is computed by adaptive Gauss-Kronrod.
inline double log_green_function(const MigrationKernel& kernel, double horizon, std::size_t j, std::size_t k) {
    kernel.check_site(j);
    kernel.check_site(k);
    detail::check_time(horizon, "horizon");
    if (horizon == 0.0) return 0.0;
    if (j > k) std::swap(j, k);
    const double g = green_function(kernel, horizon, j, k);
    auto integrand = [&](double s) {
        const double p = transition_row(kernel, s, k)[j];
        if (p <= 0.0) return 0.0;
        return p * std::abs(std::log(p));
    };
    double err = 0.0;
    const double extra = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        integrand, 0.0, horizon, 20, kQuadratureTolerance * 1e-2, &err);
    return g + std::max(0.0, extra);
}

// ---------------------------------------------------------------------------
// Recurrence diagnostics

enum class RecurrenceVerdict { recurrent, transient, undetermined };

inline std::string to_string(RecurrenceVerdict v) {
    switch (v) {
    case RecurrenceVerdict::recurrent: return "recurrent";
    case RecurrenceVerdict::transient: return "transient";
    case RecurrenceVerdict::undetermined: return "undetermined";
    }
    return "undetermined";
}

struct RecurrenceEvidence {
    RecurrenceVerdict verdict = RecurrenceVerdict::undetermined;
    bool analytic = false;
    std::string basis;
    std::vector<double> horizons;
    // growth_profile[h][j] = g_{horizons[h]}(j,j)
    std::vector<std::vector<double>> growth_profile;
};

// Built-in families return their analytic flag; custom kernels return
// `undetermined` with the diagonal Green profile. A finite site set is always
// recurrent, so the profile supports extrapolation only.
inline RecurrenceEvidence classify_recurrence(const MigrationKernel& kernel, const std::vector<double>& probe_horizons) {
    if (probe_horizons.empty()) throw PreconditionError("probe_horizons must be nonempty");
    for (std::size_t h = 0; h < probe_horizons.size(); ++h) {
        detail::check_time(probe_horizons[h], "probe horizon");
        if (h > 0 && !(probe_horizons[h] > probe_horizons[h - 1]))
            throw PreconditionError("probe_horizons must be strictly increasing");
    }
    RecurrenceEvidence ev;
    ev.horizons = probe_horizons;
    switch (kernel.family()) {
    case KernelFamily::torus_laplacian:
        ev.analytic = true;
        ev.verdict = kernel.dimension() <= 2 ? RecurrenceVerdict::recurrent : RecurrenceVerdict::transient;
        ev.basis = "simple random walk on Z^" + std::to_string(kernel.dimension()) +
                   ", as infinite-lattice idealization of the periodic torus";
        return ev;
    case KernelFamily::complete_graph:
        ev.analytic = true;
        ev.verdict = RecurrenceVerdict::recurrent;
        ev.basis = "irreducible chain on a finite set";
        return ev;
    case KernelFamily::single_site:
        ev.analytic = true;
        ev.verdict = RecurrenceVerdict::recurrent;
        ev.basis = "chain never leaves its site";
        return ev;
    case KernelFamily::custom: break;
    }
    ev.basis = "custom kernel: diagonal Green growth profile only";
    for (double h : probe_horizons) ev.growth_profile.push_back(green_diagonal(kernel, h));
    return ev;
}

struct UniformityCheck {
    bool holds = true;
    std::size_t witness_site = 0; // site with the smallest ratio
    double ratio = 1.0;           // g_T(witness, witness) / sup_k g_T(k,k)
    double sup = 0.0;
};

// g_T(j,j) >= C sup_k g_T(k,k) for all j. Values equal up to series roundoff
// count as equal (relative slack 1e-10).
inline UniformityCheck uniformity_condition_check(const MigrationKernel& kernel, double horizon, double c) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw DomainError("horizon must be positive");
    if (!(c > 0.0 && c <= 1.0)) throw DomainError("constant C must lie in (0, 1]");
    const auto diag = green_diagonal(kernel, horizon);
    UniformityCheck out;
    out.sup = *std::max_element(diag.begin(), diag.end());
    const auto min_it = std::min_element(diag.begin(), diag.end());
    out.witness_site = static_cast<std::size_t>(min_it - diag.begin());
    out.ratio = *min_it / out.sup;
    out.holds = *min_it >= c * out.sup * (1.0 - 1e-10);
    return out;
}

} // namespace symbranch
