#pragma once

// Experiment runner behind the `symbranch` command: config loading (JSON or
// TOML), dispatch to the owning module, atomic CSV/JSON persistence and the
// machine-readable error record.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "dual.hpp"
#include "errors.hpp"
#include "infinite_rate.hpp"
#include "migration.hpp"
#include "quadrant.hpp"
#include "sbm_sde.hpp"

namespace symbranch::experiments {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum class Kind { simulate, dual_audit, green, dichotomy, exitq, inf_rate, gamma_study };
enum class Format { csv, json };

inline std::string to_string(Kind k) {
    switch (k) {
    case Kind::simulate: return "simulate";
    case Kind::dual_audit: return "dual_audit";
    case Kind::green: return "green";
    case Kind::dichotomy: return "dichotomy";
    case Kind::exitq: return "exitq";
    case Kind::inf_rate: return "inf_rate";
    case Kind::gamma_study: return "gamma_study";
    }
    return "simulate";
}

inline Kind parse_kind(const std::string& s) {
    for (Kind k : {Kind::simulate, Kind::dual_audit, Kind::green, Kind::dichotomy, Kind::exitq, Kind::inf_rate,
                   Kind::gamma_study})
        if (to_string(k) == s) return k;
    throw UsageError("kind", "unknown experiment kind '" + s + "'");
}

inline Format parse_format(const std::string& s) {
    if (s == "csv") return Format::csv;
    if (s == "json") return Format::json;
    throw UsageError("format", "format must be csv or json");
}

// Written output (unlike NumericalBlowup, not tied to a site or step).
class NonFiniteOutput : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Config loading

namespace detail {

inline json toml_to_json(const toml::node& node) {
    if (const auto* t = node.as_table()) {
        json j = json::object();
        for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
        return j;
    }
    if (const auto* a = node.as_array()) {
        json j = json::array();
        for (const auto& v : *a) j.push_back(toml_to_json(v));
        return j;
    }
    if (const auto* v = node.as_integer()) return v->get();
    if (const auto* v = node.as_floating_point()) {
        const double x = v->get();
        // JSON has no infinity; "inf" is the schema's spelling.
        if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
        return x;
    }
    if (const auto* v = node.as_boolean()) return v->get();
    if (const auto* v = node.as_string()) return v->get();
    throw UsageError("config", "unsupported TOML value type");
}

} // namespace detail

inline json load_config_text(const std::string& text, bool toml_syntax) {
    if (toml_syntax) {
        try {
            return detail::toml_to_json(toml::parse(text));
        } catch (const toml::parse_error& e) {
            throw UsageError("config", std::string("TOML parse error: ") + std::string(e.description()));
        }
    }
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw UsageError("config", std::string("JSON parse error: ") + e.what());
    }
}

inline json load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("config", "cannot read config file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    const auto ext = path.extension().string();
    return load_config_text(ss.str(), ext == ".toml");
}

// Typed, path-aware view of one config object. Every key must be consumed;
// leftovers are reported as unknown fields.
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw UsageError(path_.empty() ? "config" : path_, "expected an object");
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    bool has(const std::string& key) const { return j_.contains(key); }

    const json& raw(const std::string& key) {
        used_.insert(key);
        if (!j_.contains(key)) throw UsageError(at(key), "required field is missing");
        return j_.at(key);
    }

    double number(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_number()) throw UsageError(at(key), "expected a number");
        return v.get<double>();
    }
    double number(const std::string& key, double fallback) { return has(key) ? number(key) : mark(key, fallback); }

    // Number or "inf".
    double extended(const std::string& key) {
        const json& v = raw(key);
        if (v.is_string()) {
            const auto s = v.get<std::string>();
            if (s == "inf" || s == "infinity" || s == "Infinity") return std::numeric_limits<double>::infinity();
            throw UsageError(at(key), "expected a number or \"inf\"");
        }
        if (!v.is_number()) throw UsageError(at(key), "expected a number or \"inf\"");
        return v.get<double>();
    }

    std::uint64_t count(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_number_integer() || v.get<long long>() < 0)
            throw UsageError(at(key), "expected a nonnegative integer");
        return v.get<std::uint64_t>();
    }
    std::uint64_t count(const std::string& key, std::uint64_t fallback) {
        return has(key) ? count(key) : mark(key, fallback);
    }

    bool flag(const std::string& key, bool fallback) {
        if (!has(key)) return mark(key, fallback);
        const json& v = raw(key);
        if (!v.is_boolean()) throw UsageError(at(key), "expected a boolean");
        return v.get<bool>();
    }

    std::string text(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_string()) throw UsageError(at(key), "expected a string");
        return v.get<std::string>();
    }
    std::string text(const std::string& key, const std::string& fallback) {
        return has(key) ? text(key) : mark(key, fallback);
    }

    std::vector<double> numbers(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_array()) throw UsageError(at(key), "expected an array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) throw UsageError(at(key) + "[" + std::to_string(i) + "]", "expected a number");
            out.push_back(v[i].get<double>());
        }
        return out;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!used_.count(k)) throw UsageError(at(k), "unknown field");
    }

private:
    template <class T>
    T mark(const std::string& key, T value) {
        used_.insert(key);
        return value;
    }

    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

struct ExperimentConfig {
    Kind kind = Kind::simulate;
    json spec;                        // as loaded, with --seed applied
    std::filesystem::path out_dir = "symbranch_out";
    Format format = Format::csv;
};

// ---------------------------------------------------------------------------
// Output

inline std::string format_time(double t) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, t);
    return {buf, r.ptr};
}

// Shortest round-trip representation; integral values keep a ".0".
inline std::string format_value(double x) {
    std::string s = format_time(x);
    if (std::isfinite(x) && s.find_first_of(".eE") == std::string::npos) s += ".0";
    return s;
}

struct Cell {
    std::string text;
    bool numeric = false;
    double value = 0.0;
    bool integral = false;
};

inline Cell label(std::string s) { return {std::move(s), false, 0.0, false}; }
inline Cell time_cell(double t) { return {format_time(t), true, t, false}; }
inline Cell value_cell(double x) { return {format_value(x), true, x, false}; }
inline Cell int_cell(std::uint64_t v) { return {std::to_string(v), true, static_cast<double>(v), true}; }

struct Table {
    std::string name; // file stem
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;

    void add(std::vector<Cell> row) { rows.push_back(std::move(row)); }

    void check_finite() const {
        for (const auto& r : rows)
            for (std::size_t c = 0; c < r.size(); ++c)
                if (r[c].numeric && !std::isfinite(r[c].value))
                    throw NonFiniteOutput("non-finite value in column '" + columns[c] + "' of " + name);
    }
};

inline void check_finite_json(const json& j, const std::string& where) {
    if (j.is_number_float() && !std::isfinite(j.get<double>()))
        throw NonFiniteOutput("non-finite value at " + where);
    if (j.is_structured())
        for (const auto& [k, v] : j.items()) check_finite_json(v, where + "." + k);
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

struct OutputHeader {
    Kind kind = Kind::simulate;
    std::uint64_t seed = 0;
    json config;
    std::string stream_layout;
    std::string generated; // kept on its own line / field so bodies compare byte for byte
};

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string render_csv(const Table& t, const OutputHeader& h) {
    std::ostringstream ss;
    ss << "# schema_version: " << kSchemaVersion << "\n";
    ss << "# kind: " << to_string(h.kind) << "\n";
    ss << "# seed: " << h.seed << "\n";
    ss << "# stream_layout: " << h.stream_layout << "\n";
    ss << "# config: " << h.config.dump() << "\n";
    ss << "# generated: " << h.generated << "\n";
    for (std::size_t c = 0; c < t.columns.size(); ++c) ss << (c ? "," : "") << t.columns[c];
    ss << "\n";
    for (const auto& r : t.rows) {
        for (std::size_t c = 0; c < r.size(); ++c) ss << (c ? "," : "") << csv_escape(r[c].text);
        ss << "\n";
    }
    return ss.str();
}

inline json header_json(const OutputHeader& h) {
    return json{{"schema_version", kSchemaVersion},
                {"kind", to_string(h.kind)},
                {"seed", h.seed},
                {"stream_layout", h.stream_layout},
                {"config", h.config},
                {"generated", h.generated}};
}

inline std::string render_json_table(const Table& t, const OutputHeader& h) {
    json j = header_json(h);
    j["columns"] = t.columns;
    json rows = json::array();
    for (const auto& r : t.rows) {
        json o = json::object();
        for (std::size_t c = 0; c < r.size(); ++c) {
            if (!r[c].numeric)
                o[t.columns[c]] = r[c].text;
            else if (r[c].integral)
                o[t.columns[c]] = static_cast<std::uint64_t>(r[c].value);
            else
                o[t.columns[c]] = r[c].value;
        }
        rows.push_back(std::move(o));
    }
    j["rows"] = std::move(rows);
    return j.dump(2) + "\n";
}

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
        out << content;
        out.flush();
        if (!out) throw Error("failed writing '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

struct Outputs {
    std::vector<Table> tables;
    std::vector<std::pair<std::string, json>> reports; // file name -> body
};

inline std::vector<std::filesystem::path> persist(const Outputs& out, const ExperimentConfig& cfg,
                                                  const OutputHeader& header) {
    for (const auto& t : out.tables) t.check_finite();
    for (const auto& [name, body] : out.reports) check_finite_json(body, name);
    std::filesystem::create_directories(cfg.out_dir);
    std::vector<std::filesystem::path> files;
    for (const auto& t : out.tables) {
        const bool csv = cfg.format == Format::csv;
        const auto path = cfg.out_dir / (t.name + (csv ? ".csv" : ".json"));
        write_atomic(path, csv ? render_csv(t, header) : render_json_table(t, header));
        files.push_back(path);
    }
    for (const auto& [name, body] : out.reports) {
        json j = header_json(header);
        j["result"] = body;
        const auto path = cfg.out_dir / name;
        write_atomic(path, j.dump(2) + "\n");
        files.push_back(path);
    }
    return files;
}

// Output body with header lines (CSV) or the "generated" field (JSON) removed.
inline std::string strip_header(const std::string& content) {
    if (!content.empty() && content.front() == '{') {
        json j = json::parse(content);
        j.erase("generated");
        return j.dump();
    }
    std::istringstream in(content);
    std::string line;
    std::string out;
    while (std::getline(in, line))
        if (line.rfind("# generated:", 0) != 0) out += line + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Shared config pieces

namespace detail {

inline std::size_t site_from_json(const MigrationKernel& kernel, const json& v, const std::string& path) {
    try {
        if (v.is_number_integer()) {
            const auto i = v.get<long long>();
            if (i < 0) throw IndexError("negative site index");
            kernel.check_site(static_cast<std::size_t>(i));
            return static_cast<std::size_t>(i);
        }
        if (v.is_string()) return kernel.parse_site(v.get<std::string>());
    } catch (const IndexError& e) {
        throw UsageError(path, e.what());
    }
    throw UsageError(path, "expected a site index or label");
}

inline std::vector<std::pair<std::size_t, std::size_t>> parse_pairs(Fields& f, const MigrationKernel& kernel,
                                                                     std::size_t default_all_limit) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (f.has("pairs")) {
        const json& v = f.raw("pairs");
        if (v.is_string() && v.get<std::string>() == "all") {
            for (std::size_t a = 0; a < kernel.size(); ++a)
                for (std::size_t b = 0; b < kernel.size(); ++b) pairs.emplace_back(a, b);
            return pairs;
        }
        if (!v.is_array()) throw UsageError(f.at("pairs"), "expected \"all\" or an array of [a, b] pairs");
        for (std::size_t i = 0; i < v.size(); ++i) {
            const auto p = f.at("pairs") + "[" + std::to_string(i) + "]";
            if (!v[i].is_array() || v[i].size() != 2) throw UsageError(p, "expected a pair [a, b]");
            pairs.emplace_back(site_from_json(kernel, v[i][0], p + "[0]"), site_from_json(kernel, v[i][1], p + "[1]"));
        }
        return pairs;
    }
    if (kernel.size() <= default_all_limit) {
        for (std::size_t a = 0; a < kernel.size(); ++a)
            for (std::size_t b = 0; b < kernel.size(); ++b) pairs.emplace_back(a, b);
    } else {
        for (std::size_t a = 0; a < kernel.size(); ++a) pairs.emplace_back(a, a);
    }
    return pairs;
}

struct InitialSpec {
    std::string preset = "homogeneous";
    std::size_t k = 0;
    std::size_t l = 0;
};

inline InitialSpec parse_initial(Fields& f, const MigrationKernel& kernel, const std::string& fallback) {
    InitialSpec s;
    if (!f.has("initial")) {
        if (fallback.empty()) f.raw("initial");
        s.preset = fallback;
        return s;
    }
    Fields g(f.raw("initial"), f.at("initial"));
    s.preset = g.text("preset");
    if (s.preset == "localized") {
        s.k = site_from_json(kernel, g.raw("k"), g.at("k"));
        s.l = site_from_json(kernel, g.raw("l"), g.at("l"));
    } else if (s.preset != "homogeneous") {
        throw UsageError(g.at("preset"), "preset must be homogeneous or localized");
    }
    g.finish();
    return s;
}

inline FieldPair make_initial(const InitialSpec& s, std::size_t n) {
    return s.preset == "localized" ? localized_initial(n, s.k, s.l) : homogeneous_initial(n);
}

inline MigrationKernel parse_kernel(Fields& f) { return kernel_from_json(f.raw("kernel"), f.at("kernel")); }

// Record grid: explicit `record_times`, else `record_every`, else {0, horizon}.
inline std::vector<double> parse_record_times(Fields& f, double horizon) {
    if (f.has("record_times")) {
        auto t = f.numbers("record_times");
        if (t.empty()) throw UsageError(f.at("record_times"), "must be nonempty");
        return t;
    }
    if (f.has("record_every")) {
        const double every = f.number("record_every");
        if (!(every > 0.0)) throw UsageError(f.at("record_every"), "must be positive");
        std::vector<double> t;
        const auto n = static_cast<std::size_t>(std::llround(horizon / every));
        for (std::size_t k = 0; k <= n; ++k) t.push_back(static_cast<double>(k) * every);
        return t;
    }
    return {0.0, horizon};
}

inline ModelParams parse_model(Fields& f, std::uint64_t seed) {
    ModelParams p;
    p.rho = f.number("rho");
    p.gamma = f.has("gamma") ? f.extended("gamma") : 1.0;
    p.dt = f.number("dt");
    p.horizon = f.number("horizon");
    p.replicas = f.count("replicas");
    p.seed = seed;
    p.record_times = parse_record_times(f, p.horizon);
    return p;
}

inline std::vector<double> parse_times(Fields& f, const std::string& key) {
    auto t = f.numbers(key);
    if (t.empty()) throw UsageError(f.at(key), "must be nonempty");
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(t[i]) || t[i] < 0.0)
            throw UsageError(f.at(key) + "[" + std::to_string(i) + "]", "times must be finite and nonnegative");
    return t;
}

inline Table masses_table(const EnsembleResult& r) {
    Table t{"masses", {"time", "replica", "mass_u", "mass_v", "M", "int_uv"}, {}};
    for (std::size_t k = 0; k < r.records(); ++k)
        for (std::size_t rep = 0; rep < r.params.replicas; ++rep) {
            const auto& m = r.mass(rep, k);
            t.add({time_cell(m.time), int_cell(rep), value_cell(m.mass_u), value_cell(m.mass_v), value_cell(m.product),
                   value_cell(m.int_uv)});
        }
    return t;
}

inline Table moments_table(const EnsembleResult& r, const MigrationKernel& kernel) {
    Table t{"moments", {"time", "a", "b", "mean", "se"}, {}};
    for (std::size_t k = 0; k < r.records(); ++k) {
        const double time = static_cast<double>(r.record_steps[k]) * r.params.dt;
        for (const auto& [a, b] : r.pairs) {
            const Estimate e = second_moment_estimate(r, a, b, time);
            t.add({time_cell(time), label(kernel.site_label(a)), label(kernel.site_label(b)), value_cell(e.mean),
                   value_cell(e.se)});
        }
    }
    return t;
}

inline json estimate_json(const Estimate& e) { return json{{"mean", e.mean}, {"se", e.se}, {"n", e.n}}; }

inline json stability_json(const StabilityReport& s) {
    return json{{"rate_guard", s.rate_guard},
                {"coefficient_guard_steps", s.coefficient_guard_steps},
                {"clamp_events", s.clamp_events}};
}

inline json mass_drift_json(const EnsembleResult& r) {
    json rows = json::array();
    const double u0 = r.initial.mass_u();
    const double v0 = r.initial.mass_v();
    for (const auto& s : mass_statistics(r)) {
        auto z = [](double d, double se) { return se > 0.0 ? std::abs(d) / se : (d == 0.0 ? 0.0 : 1e300); };
        rows.push_back({{"time", s.time},
                        {"mass_u", estimate_json(s.mass_u)},
                        {"mass_v", estimate_json(s.mass_v)},
                        {"abs_z_u", z(s.mass_u.mean - u0, s.mass_u.se)},
                        {"abs_z_v", z(s.mass_v.mean - v0, s.mass_v.se)}});
    }
    return rows;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Experiments

struct DichotomyCurve {
    std::string name;
    json kernel;
    std::string recurrence;
    double gamma = 0.0;
    double rho = 0.0;
    std::vector<double> times;
    std::vector<double> oracle;
    std::vector<Estimate> overlay; // SDE / Trotter ensemble, optional
    double initial_product = 0.0;
    double threshold = 0.0;
    bool nonincreasing = true;
    std::optional<double> first_below;
    double limit_estimate = 0.0;      // oracle value at the horizon
    double absorbing_chain_value = 0.0; // gamma = inf value at the horizon, recomputed directly
    bool absorbing_available = false;
    double plateau_deviation = 0.0;   // max_{t in [3T/4, T]} |c(t) - limit| / limit
    bool plateau = false;
    std::string verdict;
};

struct DichotomyOptions {
    double delta = 0.1;              // relative to E[M_0]
    double plateau_tolerance = 0.01; // relative band over the last quarter
    std::size_t overlay_replicas = 0;
    double overlay_dt = 1e-3;
    std::uint64_t seed = 0;
    unsigned threads = 0;
};

inline DichotomyCurve dichotomy_experiment(const MigrationKernel& kernel, double gamma, double rho,
                                           const FieldPair& initial, const std::vector<double>& grid,
                                           const DichotomyOptions& opt, std::string name = "primary") {
    if (grid.empty()) throw PreconditionError("dichotomy grid must be nonempty");
    DichotomyCurve c;
    c.name = std::move(name);
    c.kernel = kernel.describe();
    c.recurrence = to_string(classify_recurrence(kernel, {grid.back() > 0.0 ? grid.back() : 1.0}).verdict);
    c.gamma = gamma;
    c.rho = rho;
    c.times = grid;
    c.oracle = coexistence_functional(kernel, initial.u, initial.v, gamma, rho, grid);
    c.initial_product = initial.mass_u() * initial.mass_v();
    c.threshold = opt.delta * c.initial_product;
    const double horizon = grid.back();
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (k > 0 && c.oracle[k] > c.oracle[k - 1] * (1.0 + 1e-12) + 1e-300) c.nonincreasing = false;
        if (!c.first_below && c.oracle[k] < c.threshold) c.first_below = grid[k];
    }
    c.limit_estimate = c.oracle.back();
    if (rho < 0.0 && initial.e_valued()) {
        c.absorbing_available = true;
        double acc = 0.0;
        for (std::size_t i = 0; i < initial.size(); ++i)
            for (std::size_t j = 0; j < initial.size(); ++j)
                if (initial.u[i] * initial.v[j] != 0.0)
                    acc += initial.u[i] * initial.v[j] * no_collision_exact(kernel, i, j, horizon);
        c.absorbing_chain_value = acc;
    }
    for (std::size_t k = 0; k < grid.size(); ++k)
        if (grid[k] >= 0.75 * horizon)
            c.plateau_deviation =
                std::max(c.plateau_deviation, std::abs(c.oracle[k] - c.limit_estimate) / c.limit_estimate);
    c.plateau = c.limit_estimate > c.threshold && c.plateau_deviation <= opt.plateau_tolerance;
    const std::string T = format_time(horizon);
    const std::string d = format_time(opt.delta);
    if (c.first_below)
        c.verdict = "decays below " + d + " by T = " + T;
    else if (c.plateau)
        c.verdict = "plateaus above " + d + " through T = " + T;
    else
        c.verdict = "stays above " + d + " through T = " + T + " without a plateau";

    if (opt.overlay_replicas > 0) {
        ModelParams p;
        p.rho = rho;
        p.gamma = gamma;
        p.dt = opt.overlay_dt;
        p.horizon = horizon;
        p.replicas = opt.overlay_replicas;
        p.seed = opt.seed;
        p.record_times = grid;
        EnsembleOptions eo;
        eo.threads = opt.threads;
        const EnsembleResult r =
            std::isinf(gamma) ? simulate_infinite(kernel, p, initial, eo) : simulate_ensemble(kernel, p, initial, eo);
        for (const auto& s : mass_statistics(r)) c.overlay.push_back(s.product);
    }
    return c;
}

inline json dichotomy_json(const DichotomyCurve& c) {
    json j{{"name", c.name},
           {"kernel", c.kernel},
           {"recurrence", c.recurrence},
           {"gamma", std::isinf(c.gamma) ? json("inf") : json(c.gamma)},
           {"rho", c.rho},
           {"initial_product", c.initial_product},
           {"threshold", c.threshold},
           {"nonincreasing", c.nonincreasing},
           {"first_time_below", c.first_below ? json(*c.first_below) : json(nullptr)},
           {"limit_estimate", c.limit_estimate},
           {"plateau_deviation", c.plateau_deviation},
           {"plateau", c.plateau},
           {"verdict", c.verdict}};
    j["absorbing_chain_value"] = c.absorbing_available ? json(c.absorbing_chain_value) : json(nullptr);
    return j;
}

namespace detail {

inline std::string stream_layout(Kind k) {
    switch (k) {
    case Kind::simulate: return "philox4x32-10; key=mix(seed, sde_noise); counter=(step, site, replica)";
    case Kind::inf_rate:
        return "philox4x32-10; key=mix(seed, exit_resolution, step); counter=(draw, site, replica)";
    case Kind::dual_audit: return "philox4x32-10; key=mix(seed, dual_chain, a*N+b); counter=(draw, sample)";
    case Kind::exitq: return "philox4x32-10; key=mix(seed, quadrant_exit); counter=(draw, replica)";
    case Kind::dichotomy: return "oracle only; overlay as simulate / inf_rate";
    case Kind::green:
    case Kind::gamma_study: return "deterministic";
    }
    return "deterministic";
}

inline Outputs run_simulate(Fields& f, std::uint64_t seed, bool infinite) {
    const MigrationKernel kernel = parse_kernel(f);
    ModelParams p = parse_model(f, seed);
    const InitialSpec init = parse_initial(f, kernel, "homogeneous");
    EnsembleOptions eo;
    eo.pairs = parse_pairs(f, kernel, 25);
    eo.threads = static_cast<unsigned>(f.count("threads", 0));
    f.finish();
    if (infinite && f.has("gamma") && !std::isinf(p.gamma))
        throw PreconditionError("kind inf_rate requires gamma = \"inf\"");
    if (!infinite && std::isinf(p.gamma)) throw PreconditionError("gamma = inf belongs to kind inf_rate");
    const FieldPair u0 = make_initial(init, kernel.size());
    const EnsembleResult r =
        infinite ? simulate_infinite(kernel, p, u0, eo) : simulate_ensemble(kernel, p, u0, eo);

    Outputs out;
    out.tables.push_back(masses_table(r));
    out.tables.push_back(moments_table(r, kernel));
    json summary{{"mass_drift", mass_drift_json(r)}, {"stability", stability_json(r.stability)}};
    if (!infinite) {
        Table cv{"crossvar",
                 {"time", "realized_cv", "realized_cv_se", "predicted_cv", "ratio_cv", "realized_qv_u", "realized_qv_v",
                  "predicted_qv", "ratio_qv_u", "ratio_qv_v"},
                 {}};
        for (const auto& row : cross_variation_report(r)) {
            if (row.time == 0.0) continue;
            cv.add({time_cell(row.time), value_cell(row.realized_cv.mean), value_cell(row.realized_cv.se),
                    value_cell(row.predicted_cv.mean), value_cell(row.ratio_cv), value_cell(row.realized_qv_u.mean),
                    value_cell(row.realized_qv_v.mean), value_cell(row.predicted_qv.mean), value_cell(row.ratio_qv_u),
                    value_cell(row.ratio_qv_v)});
        }
        out.tables.push_back(std::move(cv));
    } else {
        json oracle = json::array();
        for (std::size_t k = 0; k < r.records(); ++k) {
            const double t = static_cast<double>(r.record_steps[k]) * p.dt;
            const auto scheme = trotter_second_moment(kernel, p.dt, u0.u, u0.v, r.record_steps[k]);
            const auto exact = fk_field(kernel, std::numeric_limits<double>::infinity(), -1.0, u0.u, u0.v, t);
            for (const auto& [a, b] : r.pairs) {
                const Estimate e = second_moment_estimate(r, a, b, t);
                oracle.push_back({{"time", t},
                                  {"a", kernel.site_label(a)},
                                  {"b", kernel.site_label(b)},
                                  {"mean", e.mean},
                                  {"se", e.se},
                                  {"exact", exact[a * kernel.size() + b]},
                                  {"scheme_exact", scheme[a * kernel.size() + b]}});
            }
        }
        summary["second_moments"] = std::move(oracle);
    }
    out.reports.emplace_back("summary.json", std::move(summary));
    return out;
}

inline Outputs run_dual_audit(Fields& f, std::uint64_t seed) {
    const MigrationKernel kernel = parse_kernel(f);
    const double rho = f.number("rho");
    const double gamma = f.number("gamma");
    const auto times = parse_times(f, "times");
    const InitialSpec init = parse_initial(f, kernel, "homogeneous");
    const auto pairs = parse_pairs(f, kernel, 25);
    DualMonteCarlo mc;
    mc.seed = seed;
    mc.samples = f.count("samples", 10000);
    mc.threads = static_cast<unsigned>(f.count("threads", 0));
    f.finish();
    const FieldPair u0 = make_initial(init, kernel.size());
    Table t{"dual", {"time", "a", "b", "estimator", "se", "oracle", "abs_z"}, {}};
    double max_z = 0.0;
    for (double time : times) {
        const auto field = fk_field(kernel, gamma, rho, u0.u, u0.v, time);
        for (const auto& [a, b] : pairs) {
            const Estimate e = dual_moment_estimate(kernel, u0.u, u0.v, gamma, rho, a, b, time, mc);
            const double oracle = field[a * kernel.size() + b];
            const double se = std::max(e.se, 1e-12 * std::max(1.0, std::abs(oracle)));
            const double z = std::abs(e.mean - oracle) / se;
            max_z = std::max(max_z, z);
            t.add({time_cell(time), label(kernel.site_label(a)), label(kernel.site_label(b)), value_cell(e.mean),
                   value_cell(e.se), value_cell(oracle), value_cell(z)});
        }
    }
    Outputs out;
    out.tables.push_back(std::move(t));
    out.reports.emplace_back("summary.json", json{{"max_abs_z", max_z}, {"comparisons", pairs.size() * times.size()}});
    return out;
}

inline Outputs run_green(Fields& f) {
    const MigrationKernel kernel = parse_kernel(f);
    const std::string fn = f.text("function", "green");
    const auto times = parse_times(f, "times");
    const auto pairs = parse_pairs(f, kernel, 64);
    f.finish();
    if (fn != "green" && fn != "log_green" && fn != "semigroup")
        throw UsageError("function", "function must be green, log_green or semigroup");
    Table t{fn == "semigroup" ? "semigroup" : fn, {"t", "i", "j", "value"}, {}};
    for (double time : times) {
        for (const auto& [i, j] : pairs) {
            double v = 0.0;
            if (fn == "green")
                v = green_function(kernel, time, i, j);
            else if (fn == "log_green")
                v = log_green_function(kernel, time, i, j);
            else
                v = transition_probability(kernel, time, i, j);
            t.add({time_cell(time), label(kernel.site_label(i)), label(kernel.site_label(j)), value_cell(v)});
        }
    }
    Outputs out;
    out.tables.push_back(std::move(t));
    return out;
}

struct CurveSpec {
    MigrationKernel kernel;
    double gamma;
    InitialSpec init;
};

inline CurveSpec parse_curve(Fields& f) {
    MigrationKernel kernel = parse_kernel(f);
    const double gamma = f.extended("gamma");
    const InitialSpec init = parse_initial(f, kernel, "");
    if (init.preset != "localized")
        throw PreconditionError("dichotomy requires localized initial conditions (initial.preset = localized)");
    return {std::move(kernel), gamma, init};
}

inline Outputs run_dichotomy(Fields& f, std::uint64_t seed) {
    CurveSpec primary = parse_curve(f);
    const double rho = f.number("rho");
    const auto grid = parse_times(f, "times");
    DichotomyOptions opt;
    opt.seed = seed;
    opt.delta = f.number("delta", 0.1);
    opt.plateau_tolerance = f.number("plateau_tolerance", 0.01);
    opt.threads = static_cast<unsigned>(f.count("threads", 0));
    if (f.has("overlay")) {
        Fields o(f.raw("overlay"), f.at("overlay"));
        opt.overlay_replicas = o.count("replicas");
        opt.overlay_dt = o.number("dt");
        o.finish();
    }
    std::optional<CurveSpec> compare;
    if (f.has("compare")) {
        Fields c(f.raw("compare"), f.at("compare"));
        compare = parse_curve(c);
        c.finish();
    }
    f.finish();
    if (!(rho < 0.0)) throw PreconditionError("dichotomy verdicts are defined for rho < 0");

    std::vector<DichotomyCurve> curves;
    curves.push_back(dichotomy_experiment(primary.kernel, primary.gamma, rho,
                                          make_initial(primary.init, primary.kernel.size()), grid, opt, "primary"));
    if (compare)
        curves.push_back(dichotomy_experiment(compare->kernel, compare->gamma, rho,
                                              make_initial(compare->init, compare->kernel.size()), grid, opt,
                                              "compare"));
    const bool overlay = opt.overlay_replicas > 0;
    Table t{"dichotomy", {"curve", "time", "oracle"}, {}};
    if (overlay) {
        t.columns.push_back("ensemble_mean");
        t.columns.push_back("ensemble_se");
    }
    json report = json::object();
    json arr = json::array();
    for (const auto& c : curves) {
        for (std::size_t k = 0; k < c.times.size(); ++k) {
            std::vector<Cell> row{label(c.name), time_cell(c.times[k]), value_cell(c.oracle[k])};
            if (overlay) {
                row.push_back(value_cell(c.overlay[k].mean));
                row.push_back(value_cell(c.overlay[k].se));
            }
            t.add(std::move(row));
        }
        arr.push_back(dichotomy_json(c));
    }
    report["curves"] = std::move(arr);
    Outputs out;
    out.tables.push_back(std::move(t));
    out.reports.emplace_back("report.json", std::move(report));
    return out;
}

inline Outputs run_exitq(Fields& f, std::uint64_t seed) {
    ExitBatch b;
    b.rho = f.number("rho");
    b.seed = seed;
    if (f.has("start")) {
        const auto s = f.numbers("start");
        if (s.size() != 2) throw UsageError(f.at("start"), "expected [w1, w2]");
        b.start = {s[0], s[1]};
    }
    b.dt = f.number("dt");
    b.samples = f.count("samples");
    b.max_time = f.number("max_time", 1e3);
    b.threads = static_cast<unsigned>(f.count("threads", 0));
    const double fraction = f.number("tail_fraction", 0.1);
    const auto bootstrap = f.count("bootstrap", 200);
    f.finish();
    const double p_star = critical_moment_exponent(b.rho);
    const auto samples = sample_exits(b);
    Table t{"exit", {"replica", "tau", "exit_x", "exit_y"}, {}};
    for (std::size_t i = 0; i < samples.size(); ++i)
        t.add({int_cell(i), value_cell(samples[i].tau), value_cell(samples[i].exit_point.first),
               value_cell(samples[i].exit_point.second)});
    const TailFit fit = fit_tail_exponent(samples, fraction, bootstrap, seed);
    Outputs out;
    out.tables.push_back(std::move(t));
    out.reports.emplace_back("exponent.json", json{{"rho", b.rho},
                                                   {"p_star_formula", p_star},
                                                   {"p_star_fitted", fit.exponent},
                                                   {"ci", {fit.ci_low, fit.ci_high}},
                                                   {"tail_points", fit.points},
                                                   {"censored", fit.censored},
                                                   {"samples", samples.size()},
                                                   {"dt", b.dt},
                                                   {"max_time", b.max_time}});
    return out;
}

inline Outputs run_gamma_study(Fields& f) {
    const MigrationKernel kernel = parse_kernel(f);
    const double rho = f.number("rho");
    const auto gammas = f.numbers("gammas");
    const auto times = parse_times(f, "times");
    const InitialSpec init = parse_initial(f, kernel, "homogeneous");
    f.finish();
    const FieldPair u0 = make_initial(init, kernel.size());
    const GammaStudy study = gamma_convergence_study(kernel, rho, u0.u, u0.v, gammas, times);
    Table t{"gamma_study", {"time", "a", "b", "gamma", "fk", "limit", "gap"}, {}};
    json bad = json::array();
    double final_gap = 0.0;
    for (const auto& row : study.rows) {
        for (std::size_t k = 0; k < gammas.size(); ++k)
            t.add({time_cell(row.time), label(kernel.site_label(row.a)), label(kernel.site_label(row.b)),
                   value_cell(gammas[k]), value_cell(row.fk[k]), value_cell(row.limit), value_cell(row.gaps[k])});
        if (row.a != row.b) final_gap = std::max(final_gap, row.gaps.back());
        if (!row.monotone_values || !row.monotone_gaps)
            bad.push_back({{"time", row.time}, {"a", kernel.site_label(row.a)}, {"b", kernel.site_label(row.b)}});
    }
    Outputs out;
    out.tables.push_back(std::move(t));
    out.reports.emplace_back("report.json", json{{"all_monotone", study.all_monotone()},
                                                 {"max_offdiagonal_gap_at_largest_gamma", final_gap},
                                                 {"non_monotone", bad}});
    return out;
}

} // namespace detail

struct RunResult {
    std::vector<std::filesystem::path> files;
};

inline std::uint64_t resolve_seed(const json& spec) {
    if (!spec.contains("seed")) return 0;
    const json& s = spec.at("seed");
    if (!s.is_number_integer() || s.get<long long>() < 0) throw UsageError("seed", "expected a nonnegative integer");
    return s.get<std::uint64_t>();
}

// Runs one experiment and writes its outputs under cfg.out_dir.
inline RunResult run(const ExperimentConfig& cfg) {
    Fields f(cfg.spec, "");
    if (f.has("kind") && f.text("kind") != to_string(cfg.kind))
        throw UsageError("kind", "config kind '" + cfg.spec.at("kind").get<std::string>() +
                                     "' does not match requested kind '" + to_string(cfg.kind) + "'");
    const std::uint64_t seed = resolve_seed(cfg.spec);
    if (f.has("seed")) f.raw("seed");
    Outputs out;
    switch (cfg.kind) {
    case Kind::simulate: out = detail::run_simulate(f, seed, false); break;
    case Kind::inf_rate: out = detail::run_simulate(f, seed, true); break;
    case Kind::dual_audit: out = detail::run_dual_audit(f, seed); break;
    case Kind::green: out = detail::run_green(f); break;
    case Kind::dichotomy: out = detail::run_dichotomy(f, seed); break;
    case Kind::exitq: out = detail::run_exitq(f, seed); break;
    case Kind::gamma_study: out = detail::run_gamma_study(f); break;
    }
    OutputHeader h;
    h.kind = cfg.kind;
    h.seed = seed;
    h.config = cfg.spec;
    h.stream_layout = detail::stream_layout(cfg.kind);
    h.generated = utc_timestamp();
    return {persist(out, cfg, h)};
}

// Exit codes of the command-line front end.
enum ExitCode : int { kSuccess = 0, kUsage = 2, kPrecondition = 3, kBlowup = 4, kInternal = 1 };

struct ErrorRecord {
    int code = kSuccess;
    json body;
};

// Maps the current exception to an exit code and error record.
inline ErrorRecord classify_current_exception() {
    ErrorRecord r;
    try {
        throw;
    } catch (const UsageError& e) {
        r = {kUsage, {{"error", "usage"}, {"message", e.what()}, {"field", e.field_path()}}};
    } catch (const NumericalBlowup& e) {
        r = {kBlowup, {{"error", "numerical_blowup"}, {"message", e.what()}, {"site", e.site()}, {"step", e.step()}}};
        r.body["replica"] = e.replica() ? json(*e.replica()) : json(nullptr);
    } catch (const NonFiniteOutput& e) {
        r = {kBlowup, {{"error", "non_finite_output"}, {"message", e.what()}}};
    } catch (const PreconditionError& e) {
        r = {kPrecondition, {{"error", "precondition"}, {"message", e.what()}}};
    } catch (const DomainError& e) {
        r = {kPrecondition, {{"error", "domain"}, {"message", e.what()}}};
    } catch (const IndexError& e) {
        r = {kPrecondition, {{"error", "index"}, {"message", e.what()}}};
    } catch (const std::exception& e) {
        r = {kInternal, {{"error", "internal"}, {"message", e.what()}}};
    }
    r.body["schema_version"] = kSchemaVersion;
    r.body["exit_code"] = r.code;
    return r;
}

} // namespace symbranch::experiments
