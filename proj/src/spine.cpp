#include "bbmtube/spine.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "bbmtube/errors.hpp"
#include "bbmtube/rng.hpp"
#include "bbmtube/stats.hpp"
#include "parallel.hpp"
#include "particle_engine.hpp"
#include "util.hpp"

namespace bbmtube {

namespace {

constexpr double kBoundaryGuard = 1e-6;
constexpr int kMaxRefinement = 10;  // dt / 1024
constexpr std::uint32_t kRefinementLane = 8;

double tangent_drift(double slope, double y, double L) {
    const double wave = std::numbers::pi / (2.0 * L);
    return slope - wave * std::tan(wave * y);
}

SimConfig with_horizon(const SimConfig& config, double horizon) {
    SimConfig c = config;
    c.horizon = horizon;
    c.validate();
    return c;
}

// Advances the spine one grid step at a time. Rejected Euler proposals are
// refined by splitting the same Brownian increment with a bridge draw, so the
// refined path is a refinement of the coarse one rather than a fresh sample.
class SpineStepper {
public:
    SpineStepper(const SimConfig& config, const PathSpec& path, const PathTable& table)
        : path_(path),
          tab_(table),
          rng_(config.seed),
          dt_(config.dt),
          sqrt_dt_(std::sqrt(config.dt)),
          L_(config.L),
          limit_(config.L * (1.0 - kBoundaryGuard)),
          fission_prob_(-std::expm1(-2.0 * config.r * config.dt)) {}

    // Returns true when the spine fissions at the end of step k.
    bool step(std::uint32_t k) {
        const DrawBlock draws = rng_.block(id_, k);
        const double dW = sqrt_dt_ * draws.normal();
        lane_ = kRefinementLane;
        refined_ = false;
        const double x1 = segment(static_cast<double>(k) * dt_, x_, tab_.df[k], dt_, dW, 0, k,
                                  tab_.f[k + 1]);
        if (refined_) ++substep_events;
        ibp_ += 0.5 * dt_ * (tab_.d2f[k] * x_ + tab_.d2f[k + 1] * x1);
        x_ = x1;
        return draws.u[3] <= fission_prob_;
    }

    // Spine continues as child 0; returns the id of the immigrant (child 1).
    std::uint64_t fission(std::uint32_t k) {
        const std::uint64_t immigrant = child_id(id_, k, 1);
        id_ = child_id(id_, k, 0);
        return immigrant;
    }

    Particle as_particle() const { return Particle{id_, 0, 0.0, x_, ibp_, 1.0}; }

    double x() const { return x_; }
    double ibp() const { return ibp_; }

    std::size_t substep_events = 0;
    std::size_t clamp_events = 0;

private:
    double segment(double t, double x, double slope, double h, double dW, int depth,
                   std::uint32_t k, double f_end) {
        const double f_start = depth == 0 ? tab_.f[k] : path_.f(t);
        const double x1 = x + tangent_drift(slope, x - f_start, L_) * h + dW;
        const double y1 = x1 - f_end;
        if (std::abs(y1) < limit_) return x1;
        if (depth == kMaxRefinement) {
            ++clamp_events;
            return f_end + std::copysign(limit_, y1);
        }
        refined_ = true;
        const double dW1 = 0.5 * dW + std::sqrt(0.25 * h) * rng_.normal(id_, k, lane_++);
        const double half = 0.5 * h;
        const double t_mid = t + half;
        const double x_mid = segment(t, x, slope, half, dW1, depth + 1, k, path_.f(t_mid));
        return segment(t_mid, x_mid, path_.df(t_mid), half, dW - dW1, depth + 1, k, f_end);
    }

    const PathSpec& path_;
    const PathTable& tab_;
    CounterRng rng_;
    double dt_, sqrt_dt_, L_, limit_, fission_prob_;
    std::uint64_t id_ = kRootId;
    double x_ = 0.0;
    double ibp_ = 0.0;
    std::uint32_t lane_ = kRefinementLane;
    bool refined_ = false;
};

}  // namespace

double spine_drift(double t, double x, const PathSpec& path, double L) {
    if (!(L > 0.0)) throw DomainError("spine_drift needs L > 0");
    const PathPoint pt = eval_path(path, t);
    const double y = x - pt.position;
    if (!(std::abs(y) < L)) {
        throw DomainError("spine_drift: |x - f(t)| = " + format_shortest(std::abs(y)) +
                          " is not inside the tube (L = " + format_shortest(L) + ")");
    }
    return tangent_drift(pt.slope, y, L);
}

SpineRun simulate_spine(const SimConfig& base, const PathSpec& path, double horizon) {
    const SimConfig config = with_horizon(base, horizon);
    if (!config.tube_enabled()) throw ConfigError("the spine needs a finite tube width");
    const std::size_t n = config.steps();
    const PathTable table = tabulate(path, config.dt, n);
    const std::size_t stride = config.checkpoint_stride();
    const double cost = tube_cost(config.L);
    const double wave = std::numbers::pi / (2.0 * config.L);
    const double r = config.r;

    SpineStepper spine(config, path, table);
    SpineRun run;
    run.seed_used = config.seed;

    auto zeta_at = [&](std::size_t k) {
        const double t = static_cast<double>(k) * config.dt;
        const double y = spine.x() - table.f[k];
        return std::exp(cost * t + table.df[k] * spine.x() - spine.ibp() - 0.5 * table.A[k]) *
               std::cos(wave * y);
    };
    double integral = 0.0;
    double prev_integrand = 0.0;
    auto record = [&](std::size_t k, double zeta) {
        const double t = static_cast<double>(k) * config.dt;
        const double y = spine.x() - table.f[k];
        if (!(std::abs(y) < config.L)) ++run.tube_exits;
        run.xi.push_back(spine.x());
        run.displacement.push_back(y);
        run.zeta.t_grid.push_back(t);
        run.zeta.zeta.push_back(zeta);
        run.zeta.spine_decomp.push_back(integral + std::exp(-r * t) * zeta);
    };

    const double zeta0 = zeta_at(0);
    prev_integrand = 2.0 * r * zeta0;
    record(0, zeta0);
    for (std::size_t k = 0; k < n; ++k) {
        const auto k32 = static_cast<std::uint32_t>(k);
        const double t1 = static_cast<double>(k + 1) * config.dt;
        if (spine.step(k32)) {
            const std::uint64_t immigrant = spine.fission(k32);
            run.final_state.fissions.push_back({t1, spine.x(), immigrant});
        }
        const double zeta = zeta_at(k + 1);
        const double integrand = 2.0 * r * std::exp(-r * t1) * zeta;
        integral += 0.5 * config.dt * (prev_integrand + integrand);
        prev_integrand = integrand;
        if ((k + 1) % stride == 0 || k + 1 == n) record(k + 1, zeta);
    }

    run.final_state.t = static_cast<double>(n) * config.dt;
    run.final_state.xi = spine.x();
    run.final_state.girsanov_accum = table.df[n] * spine.x() - spine.ibp();
    run.final_state.generation = run.final_state.fissions.size();
    run.substep_events = spine.substep_events;
    run.clamp_events = spine.clamp_events;
    return run;
}

std::vector<SpineRun> run_spine_ensemble(const SimConfig& config, const PathSpec& path,
                                         double horizon, std::size_t replications,
                                         unsigned threads) {
    std::vector<SpineRun> out(replications);
    detail::parallel_for(replications, threads, [&](std::size_t i) {
        SimConfig rep = config;
        rep.seed = replication_seed(config.seed, i);
        out[i] = simulate_spine(rep, path, horizon);
    });
    return out;
}

double equilibrium_density(double x, double L) {
    if (!(std::abs(x) < L)) return 0.0;
    const double c = std::cos(std::numbers::pi * x / (2.0 * L));
    return c * c / L;
}

double equilibrium_cdf(double x, double L) {
    if (x <= -L) return 0.0;
    if (x >= L) return 1.0;
    return (x + L) / (2.0 * L) + std::sin(std::numbers::pi * x / L) / (2.0 * std::numbers::pi);
}

double equilibrium_variance(double L) {
    return L * L * (1.0 / 3.0 - 2.0 / (std::numbers::pi * std::numbers::pi));
}

EquilibriumReport equilibrium_check(std::span<const double> displacements, double L,
                                    std::size_t bins) {
    if (displacements.size() < 1000) {
        throw EstimationError("equilibrium_check: insufficient data (" +
                              std::to_string(displacements.size()) + " samples, need 1000)");
    }
    if (bins < 2) throw DomainError("equilibrium_check needs at least 2 bins");
    EquilibriumReport rep;
    rep.samples = displacements.size();
    rep.observed.assign(bins, 0);
    rep.expected.resize(bins);
    const double width = 2.0 * L / static_cast<double>(bins);
    for (double y : displacements) {
        if (!(std::abs(y) < L)) throw InvariantViolation("equilibrium sample outside the tube");
        const auto b = std::min(bins - 1, static_cast<std::size_t>((y + L) / width));
        ++rep.observed[b];
    }
    const double n = static_cast<double>(rep.samples);
    for (std::size_t b = 0; b < bins; ++b) {
        const double lo = -L + width * static_cast<double>(b);
        rep.expected[b] = n * (equilibrium_cdf(lo + width, L) - equilibrium_cdf(lo, L));
        const double diff = static_cast<double>(rep.observed[b]) - rep.expected[b];
        rep.chi2 += diff * diff / rep.expected[b];
    }
    rep.dof = static_cast<double>(bins - 1);
    rep.p_value = chi2_survival(rep.chi2, rep.dof);
    const auto m = estimate_mean(displacements);
    rep.mean = m.mean;
    rep.mean_std_error = m.std_error;
    rep.variance = m.variance;
    rep.target_variance = equilibrium_variance(L);
    return rep;
}

std::vector<double> equilibrium_samples(std::span<const SpineRun> runs, double burn_in,
                                        double spacing) {
    std::vector<double> out;
    for (const auto& run : runs) {
        const auto& t = run.zeta.t_grid;
        for (std::size_t k = 0; k < t.size(); ++k) {
            if (t[k] < burn_in - 1e-9) continue;
            const double phase = (t[k] - burn_in) / spacing;
            if (std::abs(phase - std::round(phase)) < 1e-6) out.push_back(run.displacement[k]);
        }
    }
    return out;
}

std::vector<double> spine_decomposition_series(const ZetaSeries& zeta, double r) {
    const auto& t = zeta.t_grid;
    std::vector<double> out(t.size());
    if (t.empty()) return out;
    if (t.size() > 2) {
        const double h = t[1] - t[0];
        for (std::size_t k = 2; k < t.size(); ++k) {
            if (std::abs((t[k] - t[k - 1]) - h) > 1e-9 * std::max(1.0, t[k])) {
                throw DomainError("spine_decomposition_series needs a uniform grid");
            }
        }
    }
    double integral = 0.0;
    out[0] = std::exp(-r * t[0]) * zeta.zeta[0];
    for (std::size_t k = 1; k < t.size(); ++k) {
        const double a = 2.0 * r * std::exp(-r * t[k - 1]) * zeta.zeta[k - 1];
        const double b = 2.0 * r * std::exp(-r * t[k]) * zeta.zeta[k];
        integral += 0.5 * (t[k] - t[k - 1]) * (a + b);
        out[k] = integral + std::exp(-r * t[k]) * zeta.zeta[k];
    }
    return out;
}

DecayCheck check_zeta_decay(const ZetaSeries& zeta, double r, double S_tilde, double p, double T,
                            double tol) {
    DecayCheck out;
    for (std::size_t k = 0; k < zeta.t_grid.size(); ++k) {
        const double t = zeta.t_grid[k];
        if (t < T) continue;
        ++out.checked;
        const double excess = std::log(zeta.zeta[k]) - r * t + p * S_tilde * t;
        out.worst_log_excess = std::max(out.worst_log_excess, excess);
        if (excess > std::log1p(tol)) ++out.violations;
    }
    return out;
}

QTrajectory simulate_under_Q(const SimConfig& base, const PathSpec& path, double horizon) {
    const SimConfig config = with_horizon(base, horizon);
    if (!config.tube_enabled()) throw ConfigError("the spine needs a finite tube width");
    const std::size_t n = config.steps();
    const PathTable table = tabulate(path, config.dt, n);
    const detail::StepParams params = detail::make_step_params(config, table, config.seed);
    const std::size_t stride = config.checkpoint_stride();

    SpineStepper spine(config, path, table);
    QTrajectory out;
    TrajectoryStats& stats = out.stats;
    stats.seed_used = config.seed;
    std::vector<Particle> immigrants, next;

    auto record = [&](std::size_t k) {
        detail::CheckpointTally tally;
        for (const Particle& q : immigrants) detail::tally_particle(tally, q, k, params);
        detail::tally_particle(tally, spine.as_particle(), k, params);
        stats.checkpoints.push_back(static_cast<double>(k) * config.dt);
        stats.counts.push_back(tally.count);
        stats.weighted_counts.push_back(tally.weighted);
        stats.z_values.push_back(tally.z);
        stats.bound_checks += tally.checks;
        stats.bound_violations += tally.violations;
        stats.worst_bound_margin = std::max(stats.worst_bound_margin, tally.worst);
    };

    record(0);
    for (std::size_t k = 0; k < n; ++k) {
        const auto k32 = static_cast<std::uint32_t>(k);
        const double t1 = static_cast<double>(k + 1) * config.dt;
        next.clear();
        stats.total_births += detail::advance(immigrants, next, k32, params);
        if (spine.step(k32)) {
            const Particle parent = spine.as_particle();
            const std::uint64_t id = spine.fission(k32);
            next.push_back(Particle{id, parent.id, t1, parent.x, parent.ibp_accum, 1.0});
            ++out.immigrants;
            ++stats.total_births;
        }
        if (next.size() + 1 > config.n_max) {
            if (config.thinning == Thinning::StopAtCap) {
                stats.truncated = true;
                stats.truncation_time = t1;
                break;
            }
            stats.thinning_events += detail::thin(next, config.n_max - 1, k32, params);
        }
        immigrants.swap(next);
        if ((k + 1) % stride == 0 || k + 1 == n) record(k + 1);
    }
    out.substep_events = spine.substep_events;
    out.clamp_events = spine.clamp_events;
    return out;
}

std::vector<QTrajectory> run_Q_ensemble(const SimConfig& config, const PathSpec& path,
                                        double horizon, std::size_t replications,
                                        unsigned threads) {
    std::vector<QTrajectory> out(replications);
    detail::parallel_for(replications, threads, [&](std::size_t i) {
        SimConfig rep = config;
        rep.seed = replication_seed(config.seed, i);
        out[i] = simulate_under_Q(rep, path, horizon);
    });
    return out;
}

void write_spine_csv(std::ostream& out, const SpineRun& run) {
    out << "t,xi,displacement,zeta,decomposition\n";
    for (std::size_t k = 0; k < run.zeta.t_grid.size(); ++k) {
        out << format_shortest(run.zeta.t_grid[k]) << ',' << format_shortest(run.xi[k]) << ','
            << format_shortest(run.displacement[k]) << ',' << format_shortest(run.zeta.zeta[k])
            << ',' << format_shortest(run.zeta.spine_decomp[k]) << '\n';
    }
}

void write_fission_csv(std::ostream& out, const SpineRun& run) {
    out << "time,position,subtree_id\n";
    for (const auto& f : run.final_state.fissions) {
        out << format_shortest(f.time) << ',' << format_shortest(f.position) << ','
            << f.subtree_id << '\n';
    }
}

}  // namespace bbmtube
