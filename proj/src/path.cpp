#include "bbmtube/path.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bbmtube/errors.hpp"
#include "util.hpp"

namespace bbmtube {

PathPoint eval_path(const PathSpec& spec, double t) {
    if (!(t >= 0.0)) {
        throw DomainError("path '" + spec.name + "' evaluated at negative time " +
                          format_shortest(t));
    }
    return {spec.f(t), spec.df(t), spec.d2f(t)};
}

PathSpec negate_path(const PathSpec& spec) {
    PathSpec out = spec;
    out.name = "-" + spec.name;
    out.f = [f = spec.f](double t) { return -f(t); };
    out.df = [df = spec.df](double t) { return -df(t); };
    out.d2f = [d2f = spec.d2f](double t) { return -d2f(t); };
    return out;
}

PathSpec shift_path(const PathSpec& spec, double t0) {
    if (!(t0 >= 0.0)) throw DomainError("shift_path needs t0 >= 0");
    if (t0 == 0.0) return spec;
    PathSpec out = spec;
    out.name = spec.name + "@" + format_shortest(t0);
    const double base = spec.f(t0);
    out.f = [f = spec.f, t0, base](double s) { return f(s + t0) - base; };
    out.df = [df = spec.df, t0](double s) { return df(s + t0); };
    out.d2f = [d2f = spec.d2f, t0](double s) { return d2f(s + t0); };
    out.params["shift"] = t0;
    return out;
}

PathTable tabulate(const PathSpec& spec, double dt, std::size_t n_steps) {
    PathTable table;
    table.dt = dt;
    const std::size_t n = n_steps + 1;
    table.f.resize(n);
    table.df.resize(n);
    table.d2f.resize(n);
    table.A.assign(n, 0.0);
    table.B.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) * dt;
        table.f[k] = spec.f(t);
        table.df[k] = spec.df(t);
        table.d2f[k] = spec.d2f(t);
        if (!std::isfinite(table.f[k]) || !std::isfinite(table.df[k]) ||
            !std::isfinite(table.d2f[k])) {
            throw EvaluationError("path '" + spec.name + "' is not finite at t=" +
                                  format_shortest(t));
        }
        table.max_abs_d2f = std::max(table.max_abs_d2f, std::abs(table.d2f[k]));
    }
    for (std::size_t k = 0; k + 1 < n; ++k) {
        const double tm = (static_cast<double>(k) + 0.5) * dt;
        const double dm = spec.df(tm);
        const double cm = spec.d2f(tm);
        table.max_abs_d2f = std::max(table.max_abs_d2f, std::abs(cm));
        const double a0 = table.df[k] * table.df[k];
        const double a1 = table.df[k + 1] * table.df[k + 1];
        table.A[k + 1] = table.A[k] + dt / 6.0 * (a0 + 4.0 * dm * dm + a1);
        table.B[k + 1] = table.B[k] + dt / 6.0 * (std::abs(table.d2f[k]) + 4.0 * std::abs(cm) +
                                                  std::abs(table.d2f[k + 1]));
    }
    return table;
}

namespace {

// Five-point central difference; step scales with t so that cancellation in
// large |f| stays below the truncation error.
double five_point(const RealFn& g, double t) {
    const double h = 1e-5 * std::cbrt(std::max(1.0, t));
    const double lo = std::max(t, 2.0 * h);  // keep the stencil on [0, inf)
    return (-g(lo + 2 * h) + 8 * g(lo + h) - 8 * g(lo - h) + g(lo - 2 * h)) / (12 * h);
}

}  // namespace

UsualConditionsReport check_usual_conditions(const PathSpec& spec, double horizon,
                                             double tolerance) {
    if (!(horizon > 0.0)) throw DomainError("check_usual_conditions needs horizon > 0");
    UsualConditionsReport report;
    report.tolerance = tolerance;
    report.f0_abs = std::abs(spec.f(0.0));
    report.condition1 = report.f0_abs <= 1e-12;

    constexpr int kProbes = 200;
    double mismatch = 0.0;
    for (int i = 0; i < kProbes; ++i) {
        const double t = horizon * (i + 0.5) / kProbes;
        const double fd1 = five_point(spec.f, t);
        const double fd2 = five_point(spec.df, t);
        const double s = std::max(t, 2e-5 * std::cbrt(std::max(1.0, t)));
        mismatch = std::max(mismatch, std::abs(fd1 - spec.df(s)) / std::max(1.0, std::abs(spec.df(s))));
        mismatch =
            std::max(mismatch, std::abs(fd2 - spec.d2f(s)) / std::max(1.0, std::abs(spec.d2f(s))));
    }
    report.derivative_mismatch = mismatch;
    report.condition2_plausible = mismatch <= 1e-5;

    const auto fn = accumulate_functionals(spec, horizon, std::size_t{1} << 21);
    const double fractions[4] = {0.125, 0.25, 0.5, 1.0};
    const double step = fn.step;
    for (int i = 0; i < 4; ++i) {
        const double t = horizon * fractions[i];
        const auto k = static_cast<std::size_t>(std::llround(t / step));
        report.checkpoints[i] = fn.t_grid[k];
        report.b_ratio[i] = fn.B[k] / fn.t_grid[k];
    }
    bool decreasing = true;
    for (int i = 0; i + 1 < 4; ++i) {
        if (report.b_ratio[i + 1] > report.b_ratio[i] * (1.0 + 1e-9) + 1e-15) decreasing = false;
    }
    report.condition3_plausible = decreasing && report.b_ratio[3] < tolerance;
    return report;
}

SandwichTubes sandwich_tubes(const PathSpec& f_spec, const PathSpec& fn_spec, double L,
                             double horizon, std::size_t n_grid) {
    if (!(L > 0.0) || !(horizon > 0.0) || n_grid == 0) {
        throw DomainError("sandwich_tubes needs L > 0, horizon > 0 and a non-empty grid");
    }
    double distance = 0.0;
    for (std::size_t i = 0; i <= n_grid; ++i) {
        const double t = horizon * static_cast<double>(i) / static_cast<double>(n_grid);
        distance = std::max(distance, std::abs(f_spec.f(t) - fn_spec.f(t)));
    }
    if (L <= distance) {
        throw DomainError("approximation too coarse: sup|f - f_n| = " + format_shortest(distance) +
                          " is not below L = " + format_shortest(L));
    }
    return {L + distance, L - distance, distance};
}

}  // namespace bbmtube
