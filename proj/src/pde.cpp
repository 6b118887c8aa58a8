#include "bbmtube/pde.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "bbmtube/errors.hpp"
#include "bbmtube/stats.hpp"
#include "util.hpp"

namespace bbmtube {

void PDEGrid::validate() const {
    if (ny < 3) throw ConfigError("PDE grid needs ny >= 3");
    if (!(dt_pde > 0.0)) throw ConfigError("PDE grid needs dt_pde > 0");
    if (!(theta >= 0.0 && theta <= 1.0)) throw ConfigError("PDE theta must lie in [0, 1]");
}

namespace {

std::size_t whole_steps(double horizon, double dt) {
    const double n = horizon / dt;
    if (std::abs(n - std::round(n)) > 1e-6 * std::max(1.0, n)) {
        throw DomainError("horizon " + format_shortest(horizon) +
                          " is not a whole number of PDE steps");
    }
    return static_cast<std::size_t>(std::llround(n));
}

// One theta-step of u_t = u_yy / 2 + b(t) u_y with homogeneous Dirichlet data.
class ThetaStepper {
public:
    ThetaStepper(std::size_t ny, double dy)
        : dy_(dy), lower_(ny), diag_(ny), upper_(ny), rhs_(ny), scratch_(ny) {}

    void step(std::vector<double>& u, double b_now, double b_next, double h, double theta) {
        const std::size_t n = u.size();
        const double diff = 0.5 / (dy_ * dy_);
        const double adv_now = b_now / (2.0 * dy_);
        const double adv_next = b_next / (2.0 * dy_);
        const double explicit_w = (1.0 - theta) * h;
        for (std::size_t i = 0; i < n; ++i) {
            const double left = i > 0 ? u[i - 1] : 0.0;
            const double right = i + 1 < n ? u[i + 1] : 0.0;
            const double Lu =
                diff * (left - 2.0 * u[i] + right) + adv_now * (right - left);
            rhs_[i] = u[i] + explicit_w * Lu;
        }
        const double w = theta * h;
        for (std::size_t i = 0; i < n; ++i) {
            lower_[i] = -w * (diff - adv_next);
            diag_[i] = 1.0 + w * 2.0 * diff;
            upper_[i] = -w * (diff + adv_next);
        }
        // Thomas algorithm
        scratch_[0] = upper_[0] / diag_[0];
        u[0] = rhs_[0] / diag_[0];
        for (std::size_t i = 1; i < n; ++i) {
            const double m = diag_[i] - lower_[i] * scratch_[i - 1];
            scratch_[i] = upper_[i] / m;
            u[i] = (rhs_[i] - lower_[i] * u[i - 1]) / m;
        }
        for (std::size_t i = n - 1; i-- > 0;) u[i] -= scratch_[i] * u[i + 1];
    }

private:
    double dy_;
    std::vector<double> lower_, diag_, upper_, rhs_, scratch_;
};

void peclet_guard(double slope, double dy, double t) {
    if (std::abs(slope) * dy > 1.0) {
        throw DomainError("Peclet guard violated at t=" + format_shortest(t) + ": |f'| dy = " +
                          format_shortest(std::abs(slope) * dy) + " > 1; increase ny");
    }
}

double sum_mass(const std::vector<double>& u, double dy) {
    double s = 0.0;
    for (double v : u) s += v;
    return s * dy;
}

// Runs n steps of the theta-scheme from step index k0, replacing the first
// grid.rannacher_steps half-steps with implicit Euler. `drift(k)` is the
// advection coefficient at grid time k; `after_step(k)` sees the state at k.
template <class Drift, class Reaction, class After>
void march(std::vector<double>& u, const PDEGrid& grid, double dy, std::size_t k0, std::size_t n,
           Drift&& drift, Reaction&& react, After&& after_step) {
    ThetaStepper stepper(u.size(), dy);
    const double dt = grid.dt_pde;
    std::size_t half_steps_left = grid.rannacher_steps;
    for (std::size_t k = k0; k < n; ++k) {
        const double b0 = drift(k);
        const double b1 = drift(k + 1);
        react(u, 0.5 * dt);
        if (half_steps_left >= 2) {
            const double bm = 0.5 * (b0 + b1);
            stepper.step(u, b0, bm, 0.5 * dt, 1.0);
            stepper.step(u, bm, b1, 0.5 * dt, 1.0);
            half_steps_left -= 2;
        } else {
            stepper.step(u, b0, b1, dt, grid.theta);
        }
        react(u, 0.5 * dt);
        after_step(k + 1);
    }
}

PDESolution solve_survival_single(const PathSpec& path, double L, double horizon,
                                  const PDEGrid& grid, double r) {
    if (!(L > 0.0) || !std::isfinite(L)) throw DomainError("solve_survival needs finite L > 0");
    if (!(horizon >= 0.0)) throw DomainError("solve_survival needs horizon >= 0");
    const double dt = grid.dt_pde;
    const std::size_t n = whole_steps(horizon, dt);
    const double dy = grid.dy(L);
    const std::size_t ny = grid.ny;

    PDESolution sol;
    sol.r = r;
    sol.L = L;
    sol.grid = grid;
    sol.y_grid.resize(ny);
    for (std::size_t i = 0; i < ny; ++i) sol.y_grid[i] = -L + dy * static_cast<double>(i + 1);

    const std::size_t k0 = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(std::min(1e-3, 10.0 * dt) / dt)));
    sol.warm_start = static_cast<double>(k0) * dt;

    sol.t_grid.resize(n + 1);
    sol.survival.assign(n + 1, 1.0);
    for (std::size_t k = 0; k <= n; ++k) sol.t_grid[k] = static_cast<double>(k) * dt;

    std::vector<double> slope(n + 1);
    for (std::size_t k = 0; k <= n; ++k) {
        slope[k] = path.df(sol.t_grid[k]);
        if (!std::isfinite(slope[k])) {
            throw EvaluationError("path slope is not finite at t=" + format_shortest(sol.t_grid[k]));
        }
    }

    std::vector<double> u(ny);
    if (k0 <= n) {
        // Unconfined density of W(t0) - f(t0), truncated to the tube and normalised.
        const double t0 = sol.warm_start;
        const double mean = -path.f(t0);
        const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi * t0);
        for (std::size_t i = 0; i < ny; ++i) {
            const double z = sol.y_grid[i] - mean;
            u[i] = norm * std::exp(-z * z / (2.0 * t0));
        }
        const double mass = sum_mass(u, dy);
        for (double& v : u) v /= mass;

        march(
            u, grid, dy, k0, n,
            [&](std::size_t k) {
                peclet_guard(slope[k], dy, sol.t_grid[k]);
                return slope[k];
            },
            [](std::vector<double>&, double) {},
            [&](std::size_t k) { sol.survival[k] = sum_mass(u, dy); });
    } else {
        std::fill(u.begin(), u.end(), 0.0);
    }
    sol.mass_profile = u;
    sol.expected_count.resize(n + 1);
    for (std::size_t k = 0; k <= n; ++k) {
        sol.expected_count[k] = std::exp(r * sol.t_grid[k]) * sol.survival[k];
    }
    return sol;
}

PDEGrid refined(const PDEGrid& grid) {
    PDEGrid fine = grid;
    fine.ny = 2 * grid.ny + 1;  // halves dy, keeps the node set nested
    return fine;
}

double richardson(double coarse, double fine) { return (4.0 * fine - coarse) / 3.0; }

}  // namespace

PDESolution solve_survival(const PathSpec& path, double L, double horizon, const PDEGrid& grid,
                           double r) {
    grid.validate();
    if (!grid.richardson) return solve_survival_single(path, L, horizon, grid, r);
    const PDESolution coarse = solve_survival_single(path, L, horizon, grid, r);
    PDESolution sol = solve_survival_single(path, L, horizon, refined(grid), r);
    sol.grid = grid;
    for (std::size_t k = 0; k < sol.survival.size(); ++k) {
        sol.survival[k] = std::clamp(richardson(coarse.survival[k], sol.survival[k]), 0.0, 1.0);
        sol.expected_count[k] = std::exp(r * sol.t_grid[k]) * sol.survival[k];
    }
    return sol;
}

double constant_tube_exact(double L, double t, double y0) {
    if (!(L > 0.0)) throw DomainError("constant_tube_exact needs L > 0");
    if (!(t >= 0.0)) throw DomainError("constant_tube_exact needs t >= 0");
    if (!(std::abs(y0) < L)) return 0.0;
    if (t == 0.0) return 1.0;
    const double pi = std::numbers::pi;
    const double rate = pi * pi * t / (8.0 * L * L);
    double sum = 0.0;
    for (std::size_t n = 0;; ++n) {
        const double m = static_cast<double>(2 * n + 1);
        const double envelope = 4.0 / (m * pi) * std::exp(-m * m * rate);
        if (envelope < 1e-14 && n > 0) break;
        const double sign = (n % 2 == 0) ? 1.0 : -1.0;
        sum += sign * envelope * std::cos(m * pi * y0 / (2.0 * L));
    }
    return std::clamp(sum, 0.0, 1.0);
}

CountCurve to_count_curve(const PDESolution& sol) {
    CountCurve c;
    c.t = sol.t_grid;
    c.survival = sol.survival;
    c.expected_count = sol.expected_count;
    const std::size_t n = c.t.size();
    c.log_slope.assign(n, 0.0);
    if (n < 2) return c;
    std::vector<double> logs(n);
    for (std::size_t k = 0; k < n; ++k) logs[k] = std::log(c.expected_count[k]);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t lo = k == 0 ? 0 : k - 1;
        const std::size_t hi = k + 1 == n ? k : k + 1;
        c.log_slope[k] = (logs[hi] - logs[lo]) / (c.t[hi] - c.t[lo]);
    }
    return c;
}

CountCurve expected_count_curve(const PathSpec& path, double r, double L, double horizon,
                                const PDEGrid& grid) {
    return to_count_curve(solve_survival(path, L, horizon, grid, r));
}

double fit_log_slope(const CountCurve& curve, double t_lo, double t_hi) {
    std::vector<double> t, y;
    for (std::size_t k = 0; k < curve.t.size(); ++k) {
        if (curve.t[k] >= t_lo - 1e-12 && curve.t[k] <= t_hi + 1e-12) {
            if (!(curve.expected_count[k] > 0.0)) {
                throw EstimationError("expected count vanished inside the fit window");
            }
            t.push_back(curve.t[k]);
            y.push_back(std::log(curve.expected_count[k]));
        }
    }
    if (t.size() < 2) throw EstimationError("fit window holds fewer than 2 grid points");
    return ols_slope(t, y);
}

namespace {

double nonextinction_single(const PathSpec& path, double r, double L, double T,
                            const PDEGrid& grid) {
    if (!(r >= 0.0)) throw DomainError("solve_nonextinction needs r >= 0");
    if (!(L > 0.0) || !std::isfinite(L)) throw DomainError("solve_nonextinction needs finite L > 0");
    if (!(T >= 0.0)) throw DomainError("solve_nonextinction needs T >= 0");
    const double y0 = -path.f(0.0);
    if (!(std::abs(y0) < L)) return 0.0;
    if (T == 0.0) return 1.0;
    const double dt = grid.dt_pde;
    const std::size_t n = whole_steps(T, dt);
    const double dy = grid.dy(L);
    const std::size_t ny = grid.ny;

    std::vector<double> v(ny, 1.0);
    const double growth = r;
    march(
        v, grid, dy, 0, n,
        [&](std::size_t k) {
            const double s = T - static_cast<double>(k) * dt;
            const double b = -path.df(std::max(s, 0.0));
            peclet_guard(b, dy, s);
            return b;
        },
        [growth](std::vector<double>& w, double h) {
            const double e = std::exp(growth * h);
            for (double& x : w) x = x * e / (1.0 - x + x * e);
        },
        [](std::size_t) {});

    // Quadratic interpolation through the three nodes nearest y0.
    auto node = [&](std::ptrdiff_t i) { return -L + dy * static_cast<double>(i + 1); };
    auto value = [&](std::ptrdiff_t i) {
        return (i < 0 || i >= static_cast<std::ptrdiff_t>(ny)) ? 0.0 : v[static_cast<std::size_t>(i)];
    };
    const auto c = static_cast<std::ptrdiff_t>(std::llround((y0 + L) / dy)) - 1;
    const double x0 = node(c - 1), x1 = node(c), x2 = node(c + 1);
    const double l0 = (y0 - x1) * (y0 - x2) / ((x0 - x1) * (x0 - x2));
    const double l1 = (y0 - x0) * (y0 - x2) / ((x1 - x0) * (x1 - x2));
    const double l2 = (y0 - x0) * (y0 - x1) / ((x2 - x0) * (x2 - x1));
    return std::clamp(l0 * value(c - 1) + l1 * value(c) + l2 * value(c + 1), 0.0, 1.0);
}

}  // namespace

double solve_nonextinction(const PathSpec& path, double r, double L, double T,
                           const PDEGrid& grid) {
    grid.validate();
    const double fine = nonextinction_single(path, r, L, T, grid.richardson ? refined(grid) : grid);
    if (!grid.richardson) return fine;
    const double coarse = nonextinction_single(path, r, L, T, grid);
    return std::clamp(richardson(coarse, fine), 0.0, 1.0);
}

void write_count_curve_csv(std::ostream& out, const CountCurve& curve, const PDEGrid& grid,
                           double L, double r, std::size_t stride) {
    stride = std::max<std::size_t>(stride, 1);
    out << "# ny=" << grid.ny << " dy=" << format_shortest(grid.dy(L))
        << " dt_pde=" << format_shortest(grid.dt_pde) << " theta=" << format_shortest(grid.theta)
        << " rannacher_steps=" << grid.rannacher_steps << " L=" << format_shortest(L)
        << " r=" << format_shortest(r) << '\n';
    out << "t,p,expected_count,log_slope\n";
    const std::size_t n = curve.t.size();
    for (std::size_t k = 0; k < n; k = (k + 1 == n) ? n : std::min(k + stride, n - 1)) {
        out << format_shortest(curve.t[k]) << ',' << format_shortest(curve.survival[k]) << ','
            << format_shortest(curve.expected_count[k]) << ','
            << format_shortest(curve.log_slope[k]) << '\n';
    }
}

}  // namespace bbmtube
