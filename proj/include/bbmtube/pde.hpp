#pragma once

// Deterministic moving-frame solvers. In y = x - f(t) the tube is the fixed
// interval (-L, L) and the path only enters through the drift f'(t).

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "bbmtube/path.hpp"

namespace bbmtube {

struct PDEGrid {
    std::size_t ny = 400;  // interior points
    double dt_pde = 5e-4;
    double theta = 0.5;    // 0.5 = Crank-Nicolson
    std::size_t rannacher_steps = 4;  // implicit half-steps at start-up
    // Combine solutions on ny and 2ny+1 points to cancel the O(dy^2) error.
    bool richardson = true;

    double dy(double L) const { return 2.0 * L / static_cast<double>(ny + 1); }
    void validate() const;
};

struct PDESolution {
    std::vector<double> t_grid;
    std::vector<double> survival;        // p(t): single-particle tube survival
    std::vector<double> expected_count;  // e^{rt} p(t)
    std::vector<double> y_grid;          // interior nodes
    std::vector<double> mass_profile;    // density at the final time
    double r = 0.0;
    double L = 0.0;
    double warm_start = 0.0;  // p is 1 up to this time
    PDEGrid grid;
};

// Solves u_t = u_yy / 2 + f'(t) u_y on (-L, L) with u(+-L) = 0, started from
// the unconfined Gaussian at a short warm-start time. Throws DomainError if the
// Peclet guard |f'| dy <= 1 fails, naming the time.
PDESolution solve_survival(const PathSpec& path, double L, double horizon,
                           const PDEGrid& grid = {}, double r = 0.0);

// Eigenfunction expansion of the survival probability for f = 0.
double constant_tube_exact(double L, double t, double y0 = 0.0);

struct CountCurve {
    std::vector<double> t;
    std::vector<double> survival;
    std::vector<double> expected_count;
    std::vector<double> log_slope;  // centred differences of log expected_count
};

CountCurve expected_count_curve(const PathSpec& path, double r, double L, double horizon,
                                const PDEGrid& grid = {});
CountCurve to_count_curve(const PDESolution& solution);

// Least-squares slope of log expected_count over [t_lo, t_hi].
double fit_log_slope(const CountCurve& curve, double t_lo, double t_hi);

// Probability that the tube-killed BBM started at the origin still has a live
// particle at time T. Solves the backward KPP equation
//   v_tau = v_yy / 2 - f'(T - tau) v_y + r v (1 - v),  v(0) = 1, v(+-L) = 0
// by Strang splitting with an exact logistic step.
double solve_nonextinction(const PathSpec& path, double r, double L, double T,
                           const PDEGrid& grid = {});

// Header lines start with '#'; then t,p,expected_count,log_slope.
void write_count_curve_csv(std::ostream& out, const CountCurve& curve, const PDEGrid& grid,
                           double L, double r, std::size_t stride = 1);

}  // namespace bbmtube
