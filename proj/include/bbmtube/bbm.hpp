#pragma once

// Forward simulation of dyadic branching Brownian motion killed on leaving the
// tube {|x - f(t)| < L}.

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bbmtube/path.hpp"

namespace bbmtube {

enum class Thinning { StopAtCap, UniformThin };

struct SimConfig {
    double r = 1.0;
    double L = 1.0;  // +inf disables the tube
    double dt = 1e-3;
    double horizon = 1.0;
    std::size_t n_max = 1'000'000;
    std::uint64_t seed = 0;
    bool bridge_correction = true;
    Thinning thinning = Thinning::StopAtCap;
    double checkpoint_interval = 0.1;  // rounded to a whole number of steps

    // Validates; dt must satisfy dt <= min(0.1/r, L^2/100).
    SimConfig(double r, double L, double dt, double horizon);

    void validate() const;
    bool tube_enabled() const;
    std::size_t steps() const;
    std::size_t checkpoint_stride() const;
};

// A live, tube-surviving particle. Dead particles are dropped from storage, so
// every stored particle is alive.
struct Particle {
    std::uint64_t id = 0;
    std::uint64_t parent = 0;  // 0 for the root
    double birth_time = 0.0;
    double x = 0.0;
    double ibp_accum = 0.0;  // int_0^t f''(s) X(s) ds along the ancestral line
    double weight = 1.0;
};

inline constexpr std::uint64_t kRootId = 1;

struct TrajectoryStats {
    std::vector<double> checkpoints;
    std::vector<std::size_t> counts;
    std::vector<double> weighted_counts;
    std::vector<double> z_values;
    std::optional<double> extinction_time;  // empty: survived to the last checkpoint
    std::size_t total_births = 0;
    std::uint64_t seed_used = 0;

    bool truncated = false;  // population cap hit under StopAtCap
    std::optional<double> truncation_time;
    std::size_t thinning_events = 0;

    // Pathwise Girsanov bound |f'(t)X - int f''X - int f'^2| <= 2L B(t) + 2L|f'(0)| + tol.
    std::size_t bound_checks = 0;
    std::size_t bound_violations = 0;
    double worst_bound_margin = -INFINITY;  // max of lhs - rhs seen

    bool survived() const { return !extinction_time.has_value() && !counts.empty(); }
    double final_time() const { return checkpoints.empty() ? 0.0 : checkpoints.back(); }
};

struct CheckpointView {
    std::size_t index;
    double t;
    double f_t;
    std::span<const Particle> particles;
};
using Observer = std::function<void(const CheckpointView&)>;

TrajectoryStats simulate(const SimConfig& config, const PathSpec& path, const Observer& observer = {});
// Same, reusing a table built with tabulate(path, config.dt, config.steps()).
TrajectoryStats simulate(const SimConfig& config, const PathTable& table, const Observer& observer = {});

// Replication i runs with seed replication_seed(config.seed, i). Results do not
// depend on the thread count.
std::vector<TrajectoryStats> run_ensemble(const SimConfig& config, const PathSpec& path,
                                          std::size_t replications, unsigned threads = 0);

// Probability that a Brownian bridge between moving-frame positions y0 and y1
// over a step dt touches either boundary +-L (boundaries treated independently).
double bridge_kill_prob(double y0, double y1, double dt, double L);

// Z(t) = sum_u w_u exp((pi^2/8L^2 - r) t) cos(pi (X_u - f(t)) / 2L)
//        * exp(f'(t) X_u - int f'' X_u - int_0^t f'^2 / 2)
double compute_Z(std::span<const Particle> particles, double t, const PathSpec& path,
                 const SimConfig& config);

enum class Conditioning { Survivors, All };

struct GrowthEstimate {
    double rate = 0.0;       // slope of log(mean count) over the window
    double std_error = 0.0;  // batch-means standard error of `rate`
    double per_replication_mean = 0.0;  // mean of per-replication slopes of log|N(t)|
    double per_replication_spread = 0.0;
    std::size_t included = 0;
    std::size_t excluded = 0;  // replications not alive at t_hi (Survivors mode)
    double t_lo = 0.0;
    double t_hi = 0.0;
};

GrowthEstimate estimate_growth_rate(std::span<const TrajectoryStats> ensemble, double t_lo,
                                    double t_hi, Conditioning mode = Conditioning::Survivors);
// Window (t_hi/2, t_hi) with t_hi the common final checkpoint.
GrowthEstimate estimate_growth_rate(std::span<const TrajectoryStats> ensemble,
                                    Conditioning mode = Conditioning::Survivors);

struct SurvivalEstimate {
    double estimate = 0.0;
    double ci_halfwidth = 0.0;
    std::size_t survivors = 0;
    std::size_t replications = 0;
};

SurvivalEstimate survival_probability(const SimConfig& config, const PathSpec& path, double t,
                                      std::size_t replications);
// Survival at checkpoint time t of an existing ensemble.
SurvivalEstimate survival_at(std::span<const TrajectoryStats> ensemble, double t);

// CSV: t,count,weighted_count,Z,survivors_so_far
void write_checkpoint_csv(std::ostream& out, const TrajectoryStats& stats);
// Ensemble means per checkpoint; survivors_so_far counts live replications.
void write_ensemble_csv(std::ostream& out, std::span<const TrajectoryStats> ensemble);
// Sidecar manifest (JSON) with config hash, seed, truncation and thinning events.
void write_sim_manifest(std::ostream& out, const SimConfig& config, const std::string& path_key,
                        std::span<const TrajectoryStats> ensemble);

std::string config_fingerprint(const SimConfig& config, const std::string& path_key);

}  // namespace bbmtube
