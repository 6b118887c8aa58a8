#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "bbmtube/bbm.hpp"
#include "bbmtube/errors.hpp"
#include "bbmtube/harness.hpp"
#include "bbmtube/path.hpp"
#include "bbmtube/pde.hpp"
#include "bbmtube/spine.hpp"
#include "bbmtube/stats.hpp"
#include "json.hpp"
#include "util.hpp"

namespace bbmtube {

std::string code_version() { return BBMTUBE_VERSION; }

std::filesystem::path default_output_root() {
    if (const char* env = std::getenv("BBMTUBE_OUTPUT_ROOT"); env && *env) return env;
    return "results";
}

bool ExperimentReport::passed() const {
    if (failure) return false;
    return std::all_of(targets.begin(), targets.end(), [](const auto& t) { return t.passed; });
}

namespace {

using Metrics = std::map<std::string, double>;

std::string at(const std::string& metric, double t) { return metric + "@" + format_shortest(t); }

std::size_t csv_stride(const ExperimentConfig& c, std::size_t rows) {
    const auto wanted = static_cast<std::size_t>(std::max(2.0, c.get_double("csv_rows", 2000.0)));
    return std::max<std::size_t>(1, rows / wanted);
}

std::pair<double, double> fit_window(const ExperimentConfig& c) {
    const auto w = c.get_list("fit_window");
    if (w.empty()) return {0.5 * c.horizon, c.horizon};
    if (w.size() != 2 || !(w[1] > w[0])) {
        throw ConfigError("fit_window must list two increasing times");
    }
    return {w[0], w[1]};
}

PDEGrid pde_grid(const ExperimentConfig& c) {
    PDEGrid g;
    g.ny = static_cast<std::size_t>(c.get_double("pde_ny", static_cast<double>(g.ny)));
    g.dt_pde = c.get_double("pde_dt", g.dt_pde);
    g.theta = c.get_double("pde_theta", g.theta);
    g.richardson = c.get_bool("pde_richardson", g.richardson);
    g.validate();
    return g;
}

SimConfig sim_config(const ExperimentConfig& c) {
    SimConfig s(*c.r, *c.L, *c.dt, c.horizon);
    s.seed = c.seed;
    s.n_max = static_cast<std::size_t>(c.get_double("n_max", static_cast<double>(s.n_max)));
    const std::string thinning = c.get("thinning", "stop");
    if (thinning == "stop") {
        s.thinning = Thinning::StopAtCap;
    } else if (thinning == "thin") {
        s.thinning = Thinning::UniformThin;
    } else {
        throw ConfigError("thinning must be 'stop' or 'thin'");
    }
    s.bridge_correction = c.get_bool("bridge", true);
    s.checkpoint_interval = c.get_double("checkpoint_interval", s.checkpoint_interval);
    s.validate();
    return s;
}

struct EngineOutput {
    Metrics metrics;
    std::map<std::string, double> events;
    std::vector<std::string> notes;
    std::string series;  // series.csv contents
    nlohmann::json manifest_events = nlohmann::json::array();
};

// Interpolated value of A(t) / 2t on the functionals grid.
double half_energy_rate(const PathFunctionals& fn, double t) {
    if (!(t > 0.0) || t > fn.t_grid.back() * (1.0 + 1e-12)) {
        throw DomainError("probe time " + format_shortest(t) + " is outside (0, horizon]");
    }
    const double pos = t / fn.step;
    const auto k = std::min(static_cast<std::size_t>(pos), fn.t_grid.size() - 2);
    const double w = pos - static_cast<double>(k);
    const double a = (1.0 - w) * fn.A[k] + w * fn.A[k + 1];
    return a / (2.0 * t);
}

EngineOutput run_functionals(const ExperimentConfig& c, const PathSpec& path) {
    EngineOutput out;
    const auto steps = static_cast<std::size_t>(c.get_double("steps", double(std::size_t{1} << 20)));
    const auto fn = accumulate_functionals(path, c.horizon, steps);
    out.metrics["S_sup"] = fn.S_sup;
    out.metrics["S_inf"] = fn.S_inf;
    out.metrics["S_sup_half"] = 0.5 * fn.S_sup;
    out.metrics["S_inf_half"] = 0.5 * fn.S_inf;
    out.metrics["B_over_t"] = fn.B.back() / c.horizon;
    for (double t : c.get_list("probe_times")) out.metrics[at("half_energy_rate", t)] = half_energy_rate(fn, t);
    if (c.r && c.L) {
        const auto pred = predict_rates(fn, *c.r, *c.L);
        out.metrics["S_tilde"] = pred.S_tilde;
        out.metrics["rate_limsup"] = pred.rate_limsup;
        out.metrics["rate_liminf"] = pred.rate_liminf;
        if (c.entries.count("p") && pred.S_tilde > 0.0) {
            const auto T = compute_T(path, *c.r, *c.L, c.get_double("p", 0.5), c.horizon,
                                     std::min<std::size_t>(steps, std::size_t{1} << 18));
            if (T.time) {
                out.metrics["T"] = *T.time;
            } else {
                out.notes.push_back("T(p) not attained within the horizon");
            }
        }
    }
    const auto usual = check_usual_conditions(path, c.horizon);
    out.metrics["usual_conditions"] = usual.passes() ? 1.0 : 0.0;
    if (usual.passes() != path.usual_conditions_expected) {
        out.notes.push_back(std::string("usual-conditions check ") +
                            (usual.passes() ? "passed" : "failed") + " against the catalog's expectation");
    }
    std::ostringstream csv;
    write_functionals_csv(csv, fn, csv_stride(c, fn.t_grid.size()));
    out.series = csv.str();
    return out;
}

EngineOutput run_pde(const ExperimentConfig& c, const PathSpec& path) {
    EngineOutput out;
    const PDEGrid grid = pde_grid(c);
    const auto curve = to_count_curve(solve_survival(path, *c.L, c.horizon, grid, *c.r));
    const auto [lo, hi] = fit_window(c);
    out.metrics["slope"] = fit_log_slope(curve, lo, hi);
    out.metrics["final_log_slope"] = curve.log_slope.back();
    out.metrics["final_survival"] = curve.survival.back();
    for (double t : c.get_list("survival_times")) {
        const auto k = static_cast<std::size_t>(std::llround(t / grid.dt_pde));
        if (k >= curve.t.size()) throw DomainError("survival time beyond the horizon");
        out.metrics[at("p", t)] = curve.survival[k];
        out.metrics[at("expected_count", t)] = curve.expected_count[k];
        out.metrics[at("nonextinction", t)] = solve_nonextinction(path, *c.r, *c.L, t, grid);
    }
    for (double t : c.get_list("probe_times")) {
        const auto k = static_cast<std::size_t>(std::llround(t / grid.dt_pde));
        if (k >= curve.t.size()) throw DomainError("probe time beyond the horizon");
        out.metrics[at("log_slope", t)] = curve.log_slope[k];
    }
    std::ostringstream csv;
    write_count_curve_csv(csv, curve, grid, *c.L, *c.r, csv_stride(c, curve.t.size()));
    out.series = csv.str();
    return out;
}

void record_growth(EngineOutput& out, std::span<const TrajectoryStats> ensemble, double lo,
                   double hi, Conditioning mode, const std::string& label) {
    try {
        const auto g = estimate_growth_rate(ensemble, lo, hi, mode);
        out.metrics[label] = g.rate;
        out.metrics[label + "_se"] = g.std_error;
        out.metrics[label + "_included"] = static_cast<double>(g.included);
    } catch (const EstimationError& e) {
        out.notes.push_back(label + " unavailable: " + e.what());
    }
}

EngineOutput run_mc_p(const ExperimentConfig& c, const PathSpec& path) {
    EngineOutput out;
    const SimConfig sim = sim_config(c);
    const auto ensemble = run_ensemble(sim, path, c.replications, c.threads);

    std::vector<double> final_z;
    std::size_t truncations = 0, thinning = 0, checks = 0, violations = 0;
    double worst = -INFINITY;
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
        const auto& s = ensemble[i];
        checks += s.bound_checks;
        violations += s.bound_violations;
        worst = std::max(worst, s.worst_bound_margin);
        thinning += s.thinning_events;
        if (s.truncated) {
            ++truncations;
            out.manifest_events.push_back({{"replication", i},
                                           {"seed", s.seed_used},
                                           {"event", "truncation"},
                                           {"time", s.truncation_time.value_or(0.0)}});
            continue;
        }
        if (s.thinning_events > 0) {
            out.manifest_events.push_back({{"replication", i},
                                           {"seed", s.seed_used},
                                           {"event", "thinning"},
                                           {"count", s.thinning_events}});
        }
        final_z.push_back(s.z_values.back());
    }
    out.events["truncations"] = static_cast<double>(truncations);
    out.events["thinning_events"] = static_cast<double>(thinning);
    out.metrics["bound_checks"] = static_cast<double>(checks);
    out.metrics["bound_violations"] = static_cast<double>(violations);
    if (checks > 0) out.metrics["worst_bound_margin"] = worst;

    if (final_z.size() >= 2) {
        const auto z = estimate_mean(final_z);
        out.metrics["mean_Z"] = z.mean;
        out.metrics["mean_Z_se"] = z.std_error;
    }
    const auto end = survival_at(ensemble, c.horizon);
    out.metrics["survival"] = end.estimate;

    std::vector<double> times = c.get_list("survival_times");
    const bool compare = c.get_bool("compare_pde", false);
    std::size_t covered = 0;
    for (double t : times) {
        const auto s = survival_at(ensemble, t);
        out.metrics[at("survival", t)] = s.estimate;
        out.metrics[at("survival_ci", t)] = s.ci_halfwidth;
        if (compare) {
            const double pde = solve_nonextinction(path, sim.r, sim.L, t);
            const bool inside = std::abs(pde - s.estimate) <= s.ci_halfwidth;
            out.metrics[at("pde_survival", t)] = pde;
            out.metrics[at("ci_contains_pde", t)] = inside ? 1.0 : 0.0;
            covered += inside ? 1 : 0;
        }
    }
    if (compare && !times.empty()) {
        out.metrics["pde_coverage"] = static_cast<double>(covered) / static_cast<double>(times.size());
    }

    const auto [lo, hi] = fit_window(c);
    record_growth(out, ensemble, lo, hi, Conditioning::All, "growth_rate_all");
    record_growth(out, ensemble, lo, hi, Conditioning::Survivors, "growth_rate_survivors");

    std::ostringstream csv;
    write_ensemble_csv(csv, ensemble);
    out.series = csv.str();
    return out;
}

EngineOutput run_mc_q(const ExperimentConfig& c, const PathSpec& path) {
    EngineOutput out;
    const SimConfig sim = sim_config(c);
    const auto ensemble = run_Q_ensemble(sim, path, c.horizon, c.replications, c.threads);

    std::size_t truncations = 0, clamps = 0, substeps = 0, checks = 0, violations = 0;
    double immigrants = 0.0;
    std::vector<const QTrajectory*> usable;
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
        const auto& q = ensemble[i];
        clamps += q.clamp_events;
        substeps += q.substep_events;
        checks += q.stats.bound_checks;
        violations += q.stats.bound_violations;
        immigrants += static_cast<double>(q.immigrants);
        if (q.clamp_events > 0) {
            out.manifest_events.push_back({{"replication", i},
                                           {"seed", q.stats.seed_used},
                                           {"event", "clamp"},
                                           {"count", q.clamp_events}});
        }
        if (q.stats.truncated) {
            ++truncations;
            out.manifest_events.push_back({{"replication", i},
                                           {"seed", q.stats.seed_used},
                                           {"event", "truncation"},
                                           {"time", q.stats.truncation_time.value_or(0.0)}});
            continue;
        }
        usable.push_back(&q);
    }
    out.events["truncations"] = static_cast<double>(truncations);
    out.events["clamp_events"] = static_cast<double>(clamps);
    out.events["substep_events"] = static_cast<double>(substeps);
    out.metrics["bound_checks"] = static_cast<double>(checks);
    out.metrics["bound_violations"] = static_cast<double>(violations);
    out.metrics["mean_immigrants"] = immigrants / static_cast<double>(ensemble.size());
    if (usable.size() < 2) throw EstimationError("fewer than 2 untruncated Q replications");

    const std::size_t rows = usable.front()->stats.checkpoints.size();
    std::ostringstream csv;
    csv << "t,mean_count,mean_Z,mean_inverse_Z,inverse_Z_se\n";
    std::size_t monotone_violations = 0;
    double prev_mean = INFINITY, prev_se = 0.0;
    std::vector<double> inv(usable.size()), zs(usable.size()), counts(usable.size());
    for (std::size_t k = 0; k < rows; ++k) {
        for (std::size_t i = 0; i < usable.size(); ++i) {
            const auto& s = usable[i]->stats;
            inv[i] = s.z_values.front() / s.z_values[k];
            zs[i] = s.z_values[k];
            counts[i] = static_cast<double>(s.counts[k]);
        }
        const auto m = estimate_mean(inv);
        if (m.mean > prev_mean + 3.0 * std::hypot(m.std_error, prev_se)) ++monotone_violations;
        prev_mean = m.mean;
        prev_se = m.std_error;
        csv << format_shortest(usable.front()->stats.checkpoints[k]) << ','
            << format_shortest(estimate_mean(counts).mean) << ','
            << format_shortest(estimate_mean(zs).mean) << ',' << format_shortest(m.mean) << ','
            << format_shortest(m.std_error) << '\n';
        if (k + 1 == rows) {
            out.metrics["mean_inverse_Z"] = m.mean;
            out.metrics["mean_inverse_Z_se"] = m.std_error;
            out.metrics["Z_p99"] = quantile(zs, 0.99);
            out.metrics["mean_count"] = estimate_mean(counts).mean;
        }
    }
    out.metrics["inverse_Z_monotone_violations"] = static_cast<double>(monotone_violations);
    out.series = csv.str();
    return out;
}

const char* kPlotScript = R"(#!/usr/bin/env python3
# Plots every column of series.csv against the first one. Reads nothing else.
import csv
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "series.csv")) as fh:
    rows = [line for line in fh if not line.startswith("#")]
reader = csv.reader(rows)
header = next(reader)
data = [[float(v) for v in row] for row in reader if row]
if not data:
    sys.exit("series.csv has no rows")
x = [row[0] for row in data]
columns = header[1:]
fig, axes = plt.subplots(len(columns), 1, figsize=(7, 2.4 * len(columns)), sharex=True)
if len(columns) == 1:
    axes = [axes]
for j, (ax, name) in enumerate(zip(axes, columns), start=1):
    y = [row[j] for row in data]
    ax.plot(x, y, lw=1)
    if ("count" in name or name in ("p", "A", "B")) and all(v > 0 for v in y):
        ax.set_yscale("log")
    ax.set_ylabel(name)
axes[-1].set_xlabel(header[0])
fig.suptitle("@TITLE@")
fig.tight_layout()
out = os.path.join(here, "plot.png")
fig.savefig(out, dpi=120)
print(out)
)";

void write_text(const std::filesystem::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << text;
}

nlohmann::json to_json(const ExperimentReport& r) {
    nlohmann::json targets = nlohmann::json::array();
    for (const auto& t : r.targets) {
        nlohmann::json j = {{"metric", t.target.metric},
                            {"expected", t.target.describe()},
                            {"value", t.target.value},
                            {"passed", t.passed}};
        switch (t.target.kind) {
            case Target::Kind::Within:
                j["kind"] = "within";
                j["tolerance"] = t.target.tolerance;
                break;
            case Target::Kind::Below: j["kind"] = "below"; break;
            case Target::Kind::Above: j["kind"] = "above"; break;
        }
        j["measured"] = t.measured ? nlohmann::json(*t.measured) : nlohmann::json(nullptr);
        targets.push_back(j);
    }
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& [k, v] : r.metrics) {
        metrics[k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(format_shortest(v));
    }
    nlohmann::json j = {
        {"name", r.name},
        {"engine", to_string(r.engine)},
        {"config", r.config},
        {"config_hash", r.hash},
        {"code_version", code_version()},
        {"prediction", r.prediction},
        {"regime", r.regime},
        {"metrics", metrics},
        {"targets", targets},
        {"events", r.events},
        {"notes", r.notes},
        {"wall_clock_seconds", r.wall_seconds},
        {"status", r.failure ? "failed" : (r.passed() ? "pass" : "target_failure")},
    };
    if (r.failure) j["failure"] = *r.failure;
    return j;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config,
                                const std::filesystem::path& output_root) {
    const auto started = std::chrono::steady_clock::now();
    ExperimentReport report;
    report.name = config.name;
    report.engine = config.engine;
    report.config = config.entries;
    report.hash = config_hash(config.name, config.entries);

    const std::string out_key = config.get("output_dir");
    if (out_key.empty()) {
        report.output_dir = output_root / config.name;
    } else {
        const std::filesystem::path p(out_key);
        report.output_dir = p.is_absolute() ? p : output_root / p;
    }

    EngineOutput out;
    try {
        const PathSpec path = make_path(config.path_key);
        if (config.r && config.L) {
            const double h = config.get_double(
                "prediction_horizon",
                config.engine == Engine::Functionals ? config.horizon : std::max(config.horizon, 1e4));
            const auto pred = predict_rates(path, *config.r, *config.L, h);
            report.prediction = {{"S_tilde", pred.S_tilde},
                                 {"rate_limsup", pred.rate_limsup},
                                 {"rate_liminf", pred.rate_liminf},
                                 {"window_start", pred.window_start},
                                 {"window_end", pred.window_end}};
            report.regime = std::string(to_string(pred.regime));
        }
        switch (config.engine) {
            case Engine::Functionals: out = run_functionals(config, path); break;
            case Engine::PDE: out = run_pde(config, path); break;
            case Engine::MC_P: out = run_mc_p(config, path); break;
            case Engine::MC_Q: out = run_mc_q(config, path); break;
        }
    } catch (const std::exception& e) {
        report.failure = e.what();
    }
    report.metrics = out.metrics;
    report.events = out.events;
    report.notes = out.notes;
    for (const auto& t : config.targets) {
        TargetResult tr{t, std::nullopt, false};
        if (const auto it = report.metrics.find(t.metric); it != report.metrics.end()) {
            tr.measured = it->second;
            tr.passed = t.check(it->second);
        }
        report.targets.push_back(tr);
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    std::filesystem::create_directories(report.output_dir);
    write_text(report.output_dir / "report.json", to_json(report).dump(2) + "\n");
    write_text(report.output_dir / "series.csv", out.series);
    const nlohmann::json manifest = {
        {"name", config.name},
        {"config", config.entries},
        {"config_hash", report.hash},
        {"seed", config.seed},
        {"code_version", code_version()},
        {"events", out.manifest_events},
    };
    write_text(report.output_dir / "manifest.json", manifest.dump(2) + "\n");
    std::string script = kPlotScript;
    script.replace(script.find("@TITLE@"), 7, config.name + " (" + to_string(config.engine) + ")");
    write_text(report.output_dir / "plot.py", script);
    return report;
}

}  // namespace bbmtube
