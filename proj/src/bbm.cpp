#include "bbmtube/bbm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "json.hpp"

#include "bbmtube/errors.hpp"
#include "bbmtube/rng.hpp"
#include "bbmtube/stats.hpp"
#include "parallel.hpp"
#include "particle_engine.hpp"
#include "util.hpp"

namespace bbmtube {

SimConfig::SimConfig(double r_, double L_, double dt_, double horizon_)
    : r(r_), L(L_), dt(dt_), horizon(horizon_) {
    validate();
}

void SimConfig::validate() const {
    if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("branching rate r must be > 0");
    if (!(L > 0.0)) throw ConfigError("tube half-width L must be > 0");
    if (!(dt > 0.0)) throw ConfigError("time step dt must be > 0");
    if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon must be >= 0");
    const double cap = std::min(0.1 / r, L * L / 100.0);
    if (dt > cap * (1.0 + 1e-12)) {
        throw ConfigError("dt = " + format_shortest(dt) + " exceeds min(0.1/r, L^2/100) = " +
                          format_shortest(cap));
    }
    const double n = horizon / dt;
    if (std::abs(n - std::round(n)) > 1e-6 * std::max(1.0, n)) {
        throw ConfigError("horizon must be a whole number of time steps");
    }
    if (n > 4.0e9) throw ConfigError("too many time steps");
    if (n_max == 0) throw ConfigError("population cap must be positive");
    if (!(checkpoint_interval > 0.0)) throw ConfigError("checkpoint interval must be > 0");
}

bool SimConfig::tube_enabled() const { return std::isfinite(L); }

std::size_t SimConfig::steps() const {
    return static_cast<std::size_t>(std::llround(horizon / dt));
}

std::size_t SimConfig::checkpoint_stride() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(checkpoint_interval / dt)));
}

double bridge_kill_prob(double y0, double y1, double dt, double L) {
    if (!(std::abs(y0) < L) || !(std::abs(y1) < L)) {
        throw DomainError("bridge_kill_prob: endpoint outside the tube; kill deterministically");
    }
    if (!(dt > 0.0)) throw DomainError("bridge_kill_prob needs dt > 0");
    return detail::bridge_kill_unchecked(y0, y1, 2.0 / dt, L);
}

double compute_Z(std::span<const Particle> particles, double t, const PathSpec& path,
                 const SimConfig& config) {
    if (t == 0.0 && particles.empty()) return 0.0;
    const PathPoint pt = eval_path(path, t);
    double energy = 0.0;
    if (t > 0.0) {
        const auto n = std::max<std::size_t>(10, static_cast<std::size_t>(std::ceil(t / config.dt)));
        energy = accumulate_functionals(path, t, n).A.back();
    }
    const bool tube = config.tube_enabled();
    const double wave = tube ? std::numbers::pi / (2.0 * config.L) : 0.0;
    const double rate = tube_cost(config.L) - config.r;
    double z = 0.0;
    for (const Particle& q : particles) {
        const double y = q.x - pt.position;
        if (tube && !(std::abs(y) < config.L)) {
            throw InvariantViolation("compute_Z: particle " + std::to_string(q.id) +
                                     " lies outside the tube at t=" + format_shortest(t));
        }
        const double cosine = tube ? std::cos(wave * y) : 1.0;
        z += q.weight * cosine * std::exp(rate * t + pt.slope * q.x - q.ibp_accum - 0.5 * energy);
    }
    return z;
}

TrajectoryStats simulate(const SimConfig& config, const PathSpec& path, const Observer& observer) {
    config.validate();
    return simulate(config, tabulate(path, config.dt, config.steps()), observer);
}

TrajectoryStats simulate(const SimConfig& config, const PathTable& table, const Observer& observer) {
    config.validate();
    const std::size_t n_steps = config.steps();
    if (table.size() < n_steps + 1 || std::abs(table.dt - config.dt) > 1e-15) {
        throw ConfigError("path table does not cover the simulation grid");
    }
    const detail::StepParams params = detail::make_step_params(config, table, config.seed);
    const std::size_t stride = config.checkpoint_stride();

    TrajectoryStats stats;
    stats.seed_used = config.seed;
    std::vector<Particle> current{Particle{kRootId, 0, 0.0, 0.0, 0.0, 1.0}};
    std::vector<Particle> next;

    auto record = [&](std::size_t k) {
        const double t = static_cast<double>(k) * config.dt;
        detail::CheckpointTally tally;
        for (const Particle& q : current) detail::tally_particle(tally, q, k, params);
        stats.checkpoints.push_back(t);
        stats.counts.push_back(tally.count);
        stats.weighted_counts.push_back(tally.weighted);
        stats.z_values.push_back(tally.z);
        stats.bound_checks += tally.checks;
        stats.bound_violations += tally.violations;
        stats.worst_bound_margin = std::max(stats.worst_bound_margin, tally.worst);
        if (observer) observer({stats.checkpoints.size() - 1, t, table.f[k], current});
    };

    record(0);
    for (std::size_t k = 0; k < n_steps; ++k) {
        if (!current.empty()) {
            next.clear();
            stats.total_births += detail::advance(current, next, static_cast<std::uint32_t>(k), params);
            if (next.size() > config.n_max) {
                if (config.thinning == Thinning::StopAtCap) {
                    stats.truncated = true;
                    stats.truncation_time = static_cast<double>(k + 1) * config.dt;
                    break;
                }
                stats.thinning_events +=
                    detail::thin(next, config.n_max, static_cast<std::uint32_t>(k), params);
            }
            current.swap(next);
            if (current.empty()) stats.extinction_time = static_cast<double>(k + 1) * config.dt;
        }
        if ((k + 1) % stride == 0 || k + 1 == n_steps) record(k + 1);
    }
    return stats;
}

std::vector<TrajectoryStats> run_ensemble(const SimConfig& config, const PathSpec& path,
                                          std::size_t replications, unsigned threads) {
    config.validate();
    const PathTable table = tabulate(path, config.dt, config.steps());
    std::vector<TrajectoryStats> out(replications);
    detail::parallel_for(replications, threads, [&](std::size_t i) {
        SimConfig rep = config;
        rep.seed = replication_seed(config.seed, i);
        out[i] = simulate(rep, table);
    });
    return out;
}

namespace {

std::optional<std::size_t> checkpoint_index(const TrajectoryStats& stats, double t) {
    if (stats.checkpoints.empty()) return std::nullopt;
    const auto it = std::lower_bound(stats.checkpoints.begin(), stats.checkpoints.end(), t - 1e-9);
    if (it == stats.checkpoints.end() || std::abs(*it - t) > 1e-6 * std::max(1.0, t)) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - stats.checkpoints.begin());
}

// A truncated replication reached the population cap, so it is counted alive.
bool alive_at(const TrajectoryStats& stats, double t) {
    if (const auto k = checkpoint_index(stats, t)) return stats.counts[*k] > 0;
    if (stats.truncated && stats.truncation_time && *stats.truncation_time <= t + 1e-12) return true;
    throw EstimationError("time " + format_shortest(t) + " is not a recorded checkpoint");
}

double slope_over(std::span<const double> t, std::span<const double> values) {
    std::vector<double> logs(values.size());
    std::transform(values.begin(), values.end(), logs.begin(), [](double v) { return std::log(v); });
    return ols_slope(t, logs);
}

}  // namespace

GrowthEstimate estimate_growth_rate(std::span<const TrajectoryStats> ensemble, double t_lo,
                                    double t_hi, Conditioning mode) {
    if (!(t_hi > t_lo)) throw EstimationError("growth window must have t_hi > t_lo");
    GrowthEstimate est;
    est.t_lo = t_lo;
    est.t_hi = t_hi;

    std::vector<const TrajectoryStats*> members;
    for (const auto& s : ensemble) {
        const auto hi = checkpoint_index(s, t_hi);
        if (!hi) {
            ++est.excluded;  // truncated before t_hi
            continue;
        }
        if (mode == Conditioning::Survivors && s.counts[*hi] == 0) {
            ++est.excluded;
            continue;
        }
        members.push_back(&s);
    }
    if (members.size() < 2) {
        throw EstimationError("fewer than 2 replications available for growth estimation");
    }
    est.included = members.size();

    const TrajectoryStats& ref = *members.front();
    std::vector<std::size_t> idx;
    std::vector<double> times;
    for (std::size_t k = 0; k < ref.checkpoints.size(); ++k) {
        const double t = ref.checkpoints[k];
        if (t >= t_lo - 1e-9 && t <= t_hi + 1e-9) {
            idx.push_back(k);
            times.push_back(t);
        }
    }
    if (idx.size() < 2) throw EstimationError("fewer than 2 checkpoints inside the growth window");

    auto mean_counts = [&](std::size_t batch, std::size_t n_batches) {
        std::vector<double> mean(idx.size(), 0.0);
        std::size_t members_in_batch = 0;
        for (std::size_t m = batch; m < members.size(); m += n_batches) {
            ++members_in_batch;
            for (std::size_t j = 0; j < idx.size(); ++j) mean[j] += members[m]->weighted_counts[idx[j]];
        }
        for (double& v : mean) v /= static_cast<double>(members_in_batch);
        return mean;
    };

    const auto overall = mean_counts(0, 1);
    if (std::any_of(overall.begin(), overall.end(), [](double v) { return !(v > 0.0); })) {
        throw EstimationError("mean count vanishes inside the growth window");
    }
    est.rate = slope_over(times, overall);

    const std::size_t n_batches = std::min<std::size_t>(20, members.size());
    std::vector<double> batch_rates;
    for (std::size_t b = 0; b < n_batches; ++b) {
        const auto mean = mean_counts(b, n_batches);
        if (std::all_of(mean.begin(), mean.end(), [](double v) { return v > 0.0; })) {
            batch_rates.push_back(slope_over(times, mean));
        }
    }
    if (batch_rates.size() >= 2) {
        est.std_error = estimate_mean(batch_rates).std_error;
    } else {
        est.std_error = INFINITY;
    }

    std::vector<double> per_rep;
    std::vector<double> counts(idx.size());
    for (const auto* s : members) {
        bool positive = true;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            counts[j] = s->weighted_counts[idx[j]];
            positive = positive && counts[j] > 0.0;
        }
        if (positive) per_rep.push_back(slope_over(times, counts));
    }
    if (!per_rep.empty()) {
        const auto m = estimate_mean(per_rep);
        est.per_replication_mean = m.mean;
        est.per_replication_spread = std::sqrt(m.variance);
    }
    return est;
}

GrowthEstimate estimate_growth_rate(std::span<const TrajectoryStats> ensemble, Conditioning mode) {
    double t_hi = 0.0;
    for (const auto& s : ensemble) {
        if (!s.truncated) t_hi = std::max(t_hi, s.final_time());
    }
    return estimate_growth_rate(ensemble, 0.5 * t_hi, t_hi, mode);
}

SurvivalEstimate survival_at(std::span<const TrajectoryStats> ensemble, double t) {
    SurvivalEstimate est;
    est.replications = ensemble.size();
    for (const auto& s : ensemble) {
        if (alive_at(s, t)) ++est.survivors;
    }
    if (est.replications > 0) {
        est.estimate = static_cast<double>(est.survivors) / static_cast<double>(est.replications);
    }
    est.ci_halfwidth = binomial_halfwidth(est.estimate, est.replications);
    return est;
}

SurvivalEstimate survival_probability(const SimConfig& config, const PathSpec& path, double t,
                                      std::size_t replications) {
    if (replications < 100) throw DomainError("survival_probability needs at least 100 replications");
    if (!(t >= 0.0)) throw DomainError("survival_probability needs t >= 0");
    SimConfig run = config;
    run.horizon = t;
    run.checkpoint_interval = std::max(t, run.dt);
    const auto ensemble = run_ensemble(run, path, replications);
    return survival_at(ensemble, t);
}

void write_checkpoint_csv(std::ostream& out, const TrajectoryStats& stats) {
    out << "t,count,weighted_count,Z,survivors_so_far\n";
    for (std::size_t k = 0; k < stats.checkpoints.size(); ++k) {
        out << format_shortest(stats.checkpoints[k]) << ',' << stats.counts[k] << ','
            << format_shortest(stats.weighted_counts[k]) << ',' << format_shortest(stats.z_values[k])
            << ',' << (stats.counts[k] > 0 ? 1 : 0) << '\n';
    }
}

void write_ensemble_csv(std::ostream& out, std::span<const TrajectoryStats> ensemble) {
    out << "t,count,weighted_count,Z,survivors_so_far\n";
    std::size_t rows = 0;
    const TrajectoryStats* ref = nullptr;
    for (const auto& s : ensemble) {
        if (s.checkpoints.size() > rows) {
            rows = s.checkpoints.size();
            ref = &s;
        }
    }
    for (std::size_t k = 0; k < rows; ++k) {
        double count = 0.0, weighted = 0.0, z = 0.0;
        std::size_t present = 0, alive = 0;
        for (const auto& s : ensemble) {
            if (k >= s.checkpoints.size()) continue;
            ++present;
            count += static_cast<double>(s.counts[k]);
            weighted += s.weighted_counts[k];
            z += s.z_values[k];
            if (s.counts[k] > 0) ++alive;
        }
        const double n = static_cast<double>(std::max<std::size_t>(present, 1));
        out << format_shortest(ref->checkpoints[k]) << ',' << format_shortest(count / n) << ','
            << format_shortest(weighted / n) << ',' << format_shortest(z / n) << ',' << alive << '\n';
    }
}

std::string config_fingerprint(const SimConfig& c, const std::string& path_key) {
    const std::string canonical =
        "r=" + format_shortest(c.r) + ";L=" + format_shortest(c.L) + ";dt=" + format_shortest(c.dt) +
        ";horizon=" + format_shortest(c.horizon) + ";n_max=" + std::to_string(c.n_max) +
        ";seed=" + std::to_string(c.seed) + ";bridge=" + (c.bridge_correction ? "1" : "0") +
        ";thinning=" + (c.thinning == Thinning::StopAtCap ? "stop" : "thin") +
        ";checkpoint=" + format_shortest(c.checkpoint_interval) + ";path=" + path_key;
    return hex64(fnv1a64(canonical));
}

void write_sim_manifest(std::ostream& out, const SimConfig& config, const std::string& path_key,
                        std::span<const TrajectoryStats> ensemble) {
    nlohmann::json events = nlohmann::json::array();
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
        const auto& s = ensemble[i];
        if (s.truncated) {
            events.push_back({{"replication", i},
                              {"seed", s.seed_used},
                              {"event", "truncation"},
                              {"time", s.truncation_time.value_or(0.0)}});
        }
        if (s.thinning_events > 0) {
            events.push_back({{"replication", i},
                              {"seed", s.seed_used},
                              {"event", "thinning"},
                              {"count", s.thinning_events}});
        }
    }
    nlohmann::json manifest = {
        {"config_hash", config_fingerprint(config, path_key)},
        {"seed", config.seed},
        {"path", path_key},
        {"replications", ensemble.size()},
        {"events", events},
    };
    out << manifest.dump(2) << '\n';
}

}  // namespace bbmtube
