#pragma once

// Per-step particle update shared by the P-simulation and the immigrant
// subtrees of the Q-simulation.

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "bbmtube/bbm.hpp"
#include "bbmtube/path.hpp"
#include "bbmtube/rng.hpp"

namespace bbmtube::detail {

struct StepParams {
    const PathTable* table = nullptr;
    CounterRng rng{0};
    double dt = 0.0;
    double sqrt_dt = 0.0;
    double two_over_dt = 0.0;
    double L = 0.0;
    double branch_prob = 0.0;
    double z_rate = 0.0;      // pi^2/8L^2 - r
    double wave_number = 0.0;  // pi / 2L
    bool tube = true;
    bool bridge = true;
    double bound_slack_base = 0.0;  // 2L |f'(0)|
    double bound_tol_scale = 0.0;   // 10 (dt + max|f''| dt)
};

inline StepParams make_step_params(const SimConfig& config, const PathTable& table,
                                   std::uint64_t seed) {
    StepParams p;
    p.table = &table;
    p.rng = CounterRng(seed);
    p.dt = config.dt;
    p.sqrt_dt = std::sqrt(config.dt);
    p.two_over_dt = 2.0 / config.dt;
    p.L = config.L;
    p.branch_prob = -std::expm1(-config.r * config.dt);
    p.tube = config.tube_enabled();
    p.bridge = config.bridge_correction && p.tube;
    p.z_rate = tube_cost(config.L) - config.r;
    p.wave_number = p.tube ? std::numbers::pi / (2.0 * config.L) : 0.0;
    p.bound_slack_base = 2.0 * config.L * std::abs(table.df[0]);
    p.bound_tol_scale = 10.0 * (config.dt + table.max_abs_d2f * config.dt);
    return p;
}

inline double bridge_kill_unchecked(double y0, double y1, double two_over_dt, double L) {
    const double upper = std::exp(-two_over_dt * (L - y0) * (L - y1));
    const double lower = std::exp(-two_over_dt * (L + y0) * (L + y1));
    const double p = 1.0 - (1.0 - upper) * (1.0 - lower);
    return std::clamp(p, 0.0, 1.0);
}

// Moves every particle over [t_k, t_{k+1}], applies killing and branching and
// appends the survivors (and their children) to `next`. Returns the number of
// fission events.
inline std::size_t advance(std::span<const Particle> current, std::vector<Particle>& next,
                           std::uint32_t k, const StepParams& p) {
    const PathTable& tab = *p.table;
    const double f0 = tab.f[k], f1 = tab.f[k + 1];
    const double c0 = tab.d2f[k], c1 = tab.d2f[k + 1];
    const double t1 = static_cast<double>(k + 1) * p.dt;
    const double half_dt = 0.5 * p.dt;
    std::size_t births = 0;
    for (const Particle& q : current) {
        const DrawBlock draws = p.rng.block(q.id, k);
        const double x1 = q.x + p.sqrt_dt * draws.normal();
        if (p.tube) {
            const double y1 = x1 - f1;
            if (!(std::abs(y1) < p.L)) continue;
            if (p.bridge && draws.u[2] < bridge_kill_unchecked(q.x - f0, y1, p.two_over_dt, p.L)) {
                continue;
            }
        }
        Particle moved = q;
        moved.x = x1;
        moved.ibp_accum += half_dt * (c0 * q.x + c1 * x1);
        if (draws.u[3] <= p.branch_prob) {
            ++births;
            for (unsigned which = 0; which < 2; ++which) {
                Particle child = moved;
                child.id = child_id(q.id, k, which);
                child.parent = q.id;
                child.birth_time = t1;
                next.push_back(child);
            }
        } else {
            next.push_back(moved);
        }
    }
    return births;
}

// Bernoulli(1/2) thinning with weight doubling; repeated until at most n_max remain.
inline std::size_t thin(std::vector<Particle>& particles, std::size_t n_max, std::uint32_t k,
                        const StepParams& p) {
    std::size_t rounds = 0;
    while (particles.size() > n_max) {
        const auto lane = static_cast<std::uint32_t>(2 + rounds);
        std::erase_if(particles, [&](Particle& q) {
            if (p.rng.uniform(q.id, k, lane) <= 0.5) {
                q.weight *= 2.0;
                return false;
            }
            return true;
        });
        ++rounds;
    }
    return rounds;
}

// Log of the non-cosine part of a particle's Z term at grid step k.
inline double log_z_factor(const Particle& q, std::size_t k, const StepParams& p) {
    const PathTable& tab = *p.table;
    const double t = static_cast<double>(k) * p.dt;
    return p.z_rate * t + tab.df[k] * q.x - q.ibp_accum - 0.5 * tab.A[k];
}

inline double z_term(const Particle& q, std::size_t k, const StepParams& p) {
    const double y = q.x - p.table->f[k];
    const double cosine = p.tube ? std::cos(p.wave_number * y) : 1.0;
    return q.weight * cosine * std::exp(log_z_factor(q, k, p));
}

// lhs - rhs of the pathwise Girsanov bound at step k.
inline double bound_margin(const Particle& q, std::size_t k, const StepParams& p) {
    const PathTable& tab = *p.table;
    const double lhs = std::abs(tab.df[k] * q.x - q.ibp_accum - tab.A[k]);
    const double rhs = 2.0 * p.L * tab.B[k] + p.bound_slack_base +
                       p.bound_tol_scale * (1.0 + tab.B[k]);
    return lhs - rhs;
}

struct CheckpointTally {
    std::size_t count = 0;
    double weighted = 0.0;
    double z = 0.0;
    std::size_t checks = 0;
    std::size_t violations = 0;
    double worst = -INFINITY;
};

inline void tally_particle(CheckpointTally& tally, const Particle& q, std::size_t k,
                           const StepParams& p) {
    ++tally.count;
    tally.weighted += q.weight;
    tally.z += z_term(q, k, p);
    if (p.tube) {
        const double margin = bound_margin(q, k, p);
        ++tally.checks;
        if (margin > 0.0) ++tally.violations;
        tally.worst = std::max(tally.worst, margin);
    }
}

}  // namespace bbmtube::detail
