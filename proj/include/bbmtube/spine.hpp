#pragma once

// The spine under the changed measure Q~: a diffusion confined to the tube by
// a tangent drift, fissioning at rate 2r. Each fission sheds an immigrant that
// evolves as an ordinary killed BBM.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "bbmtube/bbm.hpp"
#include "bbmtube/path.hpp"

namespace bbmtube {

// f'(t) - (pi/2L) tan(pi (x - f(t)) / 2L). Throws DomainError when |x - f(t)| >= L.
double spine_drift(double t, double x, const PathSpec& path, double L);

struct Fission {
    double time;
    double position;
    std::uint64_t subtree_id;  // id of the immigrant that roots the subtree
};

struct SpineState {
    double t = 0.0;
    double xi = 0.0;
    double girsanov_accum = 0.0;  // int_0^t f' dxi, via integration by parts
    std::vector<Fission> fissions;
    std::size_t generation = 0;
};

struct ZetaSeries {
    std::vector<double> t_grid;
    std::vector<double> zeta;
    std::vector<double> spine_decomp;  // int_0^t 2r e^{-rs} zeta ds + e^{-rt} zeta(t), fine-grid trapezoid
};

struct SpineRun {
    SpineState final_state;
    std::vector<double> xi;            // at zeta.t_grid
    std::vector<double> displacement;  // xi - f at zeta.t_grid
    ZetaSeries zeta;
    std::size_t substep_events = 0;  // steps that needed bridge refinement
    std::size_t clamp_events = 0;    // refinement floor reached, displacement clamped
    std::size_t tube_exits = 0;      // recorded displacements with |y| >= L; must stay 0
    std::uint64_t seed_used = 0;
};

// Records at config.checkpoint_interval; horizon overrides config.horizon.
SpineRun simulate_spine(const SimConfig& config, const PathSpec& path, double horizon);

// Replication i uses seed replication_seed(config.seed, i).
std::vector<SpineRun> run_spine_ensemble(const SimConfig& config, const PathSpec& path,
                                         double horizon, std::size_t replications,
                                         unsigned threads = 0);

// Equilibrium law mu(dx) = cos^2(pi x / 2L) / L on (-L, L).
double equilibrium_density(double x, double L);
double equilibrium_cdf(double x, double L);
double equilibrium_variance(double L);  // L^2 (1/3 - 2/pi^2)

struct EquilibriumReport {
    double chi2 = 0.0;
    double dof = 19.0;
    double p_value = 0.0;
    double mean = 0.0;
    double mean_std_error = 0.0;
    double variance = 0.0;
    double target_variance = 0.0;
    std::size_t samples = 0;
    std::vector<std::size_t> observed;  // 20 equal-width bins over (-L, L)
    std::vector<double> expected;
};

// Throws EstimationError with fewer than 1000 samples.
EquilibriumReport equilibrium_check(std::span<const double> displacements, double L,
                                    std::size_t bins = 20);

// Post-burn-in displacements sampled every `spacing` time units.
std::vector<double> equilibrium_samples(std::span<const SpineRun> runs, double burn_in = 10.0,
                                        double spacing = 0.5);

// Trapezoid evaluation on the recorded grid, which must be uniform.
std::vector<double> spine_decomposition_series(const ZetaSeries& zeta, double r);

struct DecayCheck {
    std::size_t checked = 0;
    std::size_t violations = 0;
    double worst_log_excess = -INFINITY;  // max of log(e^{-rt} zeta) + p S~ t
};

// Checks e^{-rt} zeta(t) <= e^{-p S~ t} at recorded times t >= T, allowing a
// relative slack `tol`.
DecayCheck check_zeta_decay(const ZetaSeries& zeta, double r, double S_tilde, double p, double T,
                            double tol = 1e-2);

struct QTrajectory {
    TrajectoryStats stats;  // counts and Z include the spine
    std::size_t immigrants = 0;
    std::size_t substep_events = 0;
    std::size_t clamp_events = 0;
};

// Spine plus immigrant subtrees sharing the global step grid; Z(t) over the union.
QTrajectory simulate_under_Q(const SimConfig& config, const PathSpec& path, double horizon);

std::vector<QTrajectory> run_Q_ensemble(const SimConfig& config, const PathSpec& path,
                                        double horizon, std::size_t replications,
                                        unsigned threads = 0);

// CSV: t,xi,displacement,zeta,decomposition
void write_spine_csv(std::ostream& out, const SpineRun& run);
// CSV: time,position,subtree_id
void write_fission_csv(std::ostream& out, const SpineRun& run);

}  // namespace bbmtube
