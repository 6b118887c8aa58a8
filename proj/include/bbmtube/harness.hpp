#pragma once

// Experiment configs, engines, reports and suites.
//
// Config files are flat key = value text grouped in sections:
//
//   [experiment zero_pde]
//   engine = PDE
//   path = zero
//   r = 1
//   L = 2
//   horizon = 30
//   fit_window = 20 30
//   target.slope = 0.6916 +/- 1e-3
//
// A suite file may also contain `include = other.cfg` lines (resolved relative
// to the including file).

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bbmtube {

enum class Engine { Functionals, PDE, MC_P, MC_Q };
std::string to_string(Engine engine);
Engine parse_engine(const std::string& text);

struct Target {
    enum class Kind { Within, Below, Above };
    std::string metric;
    Kind kind = Kind::Within;
    double value = 0.0;
    double tolerance = 0.0;

    bool check(double measured) const;
    std::string describe() const;
};

Target parse_target(const std::string& metric, const std::string& spec);

struct ExperimentConfig {
    std::string name;
    std::map<std::string, std::string> entries;  // verbatim key = value pairs (the echo)
    std::filesystem::path origin;                // file the section came from

    // Typed view, filled by finalize().
    Engine engine = Engine::Functionals;
    std::string path_key;
    std::optional<double> r, L;
    double horizon = 0.0;
    std::optional<double> dt;
    std::size_t replications = 0;
    std::uint64_t seed = 0;
    unsigned threads = 0;
    std::vector<Target> targets;

    // Validates keys and engine-specific requirements; throws ConfigError.
    void finalize();

    std::string get(const std::string& key, const std::string& fallback = "") const;
    double get_double(const std::string& key, double fallback) const;
    std::vector<double> get_list(const std::string& key) const;
    bool get_bool(const std::string& key, bool fallback) const;
};

// Canonical hash of name + entries; the report echoes both so it can be re-hashed.
std::string config_hash(const std::string& name, const std::map<std::string, std::string>& entries);

std::vector<ExperimentConfig> parse_config_text(const std::string& text,
                                                const std::filesystem::path& origin);
// Follows include lines; throws ConfigError naming a missing file.
std::vector<ExperimentConfig> load_config_file(const std::filesystem::path& file);
// Rebuilds the config echoed in a manifest.json.
ExperimentConfig load_manifest(const std::filesystem::path& file);

struct TargetResult {
    Target target;
    std::optional<double> measured;
    bool passed = false;
};

struct ExperimentReport {
    std::string name;
    Engine engine = Engine::Functionals;
    std::string hash;
    std::map<std::string, std::string> config;
    std::map<std::string, double> prediction;
    std::string regime;  // predicted regime, empty without r and L
    std::map<std::string, double> metrics;
    std::vector<TargetResult> targets;
    std::map<std::string, double> events;  // truncation, thinning, clamping counts
    std::vector<std::string> notes;
    double wall_seconds = 0.0;
    std::optional<std::string> failure;  // engine error message
    std::filesystem::path output_dir;

    bool passed() const;
};

// Default output root: $BBMTUBE_OUTPUT_ROOT, else "results".
std::filesystem::path default_output_root();

// Runs the engine, writes report.json, series.csv, manifest.json and plot.py
// into output_root/name (or the config's output_dir). Engine failures are
// captured in the report rather than thrown.
ExperimentReport run_experiment(const ExperimentConfig& config,
                                const std::filesystem::path& output_root);

struct SuiteSummary {
    std::vector<ExperimentReport> reports;
    bool passed() const;
};

// Runs experiments in parallel (threads = 0: hardware concurrency), then
// writes summary.json into output_root.
SuiteSummary run_suite(const std::vector<ExperimentConfig>& experiments,
                       const std::filesystem::path& output_root, unsigned threads = 0);

void print_summary_table(std::ostream& out, const SuiteSummary& summary);

std::string code_version();

}  // namespace bbmtube
