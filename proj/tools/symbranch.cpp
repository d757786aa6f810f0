// symbranch <kind> --config <path> [--seed N] [--out DIR] [--format csv|json]

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <symbranch/experiments.hpp>

namespace ex = symbranch::experiments;

namespace {

void write_error(const ex::ErrorRecord& rec, const std::optional<std::filesystem::path>& out_dir) {
    std::cerr << rec.body.dump() << "\n";
    if (!out_dir) return;
    try {
        std::filesystem::create_directories(*out_dir);
        ex::write_atomic(*out_dir / "error.json", rec.body.dump(2) + "\n");
    } catch (const std::exception&) {
        // stderr already has the record
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Symbiotic branching experiments"};
    std::string kind;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "symbranch_out";
    std::string format = "csv";
    app.add_option("kind", kind, "simulate | dual_audit | green | dichotomy | exitq | inf_rate | gamma_study")
        ->required();
    app.add_option("--config", config_path, "JSON or TOML experiment file")->required();
    app.add_option("--seed", seed, "overrides the config seed");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--format", format, "csv or json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        ex::ErrorRecord rec{ex::kUsage, {{"error", "usage"}, {"message", e.what()}, {"field", "argv"}}};
        rec.body["schema_version"] = ex::kSchemaVersion;
        rec.body["exit_code"] = rec.code;
        write_error(rec, std::nullopt);
        return rec.code;
    }

    try {
        ex::ExperimentConfig cfg;
        cfg.kind = ex::parse_kind(kind);
        cfg.format = ex::parse_format(format);
        cfg.out_dir = out_dir;
        cfg.spec = ex::load_config_file(config_path);
        if (!cfg.spec.is_object()) throw symbranch::UsageError("config", "top level must be an object");
        if (seed) cfg.spec["seed"] = *seed;
        const auto result = ex::run(cfg);
        for (const auto& f : result.files) std::cout << f.string() << "\n";
        return ex::kSuccess;
    } catch (...) {
        const auto rec = ex::classify_current_exception();
        write_error(rec, std::filesystem::path(out_dir));
        return rec.code;
    }
}
