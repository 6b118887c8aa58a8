#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "bbmtube/errors.hpp"
#include "bbmtube/path.hpp"
#include "util.hpp"

namespace bbmtube {

namespace {

void require_finite(const PathSpec& spec, double t, double slope, double curvature) {
    if (!std::isfinite(slope) || !std::isfinite(curvature)) {
        throw EvaluationError("path '" + spec.name + "' has a non-finite derivative at t=" +
                              format_shortest(t));
    }
}

}  // namespace

PathFunctionals accumulate_functionals(const PathSpec& spec, double horizon, std::size_t n_steps) {
    if (!(horizon > 0.0)) throw DomainError("accumulate_functionals needs horizon > 0");
    if (n_steps < 10) throw DomainError("accumulate_functionals needs at least 10 steps");

    PathFunctionals out;
    const double h = horizon / static_cast<double>(n_steps);
    out.step = h;
    out.t_grid.resize(n_steps + 1);
    out.A.assign(n_steps + 1, 0.0);
    out.B.assign(n_steps + 1, 0.0);

    double d_prev = spec.df(0.0);
    double c_prev = spec.d2f(0.0);
    require_finite(spec, 0.0, d_prev, c_prev);
    for (std::size_t k = 0; k < n_steps; ++k) {
        const double t0 = static_cast<double>(k) * h;
        const double tm = t0 + 0.5 * h;
        const double t1 = (k + 1 == n_steps) ? horizon : static_cast<double>(k + 1) * h;
        const double dm = spec.df(tm), cm = spec.d2f(tm);
        const double d1 = spec.df(t1), c1 = spec.d2f(t1);
        require_finite(spec, tm, dm, cm);
        require_finite(spec, t1, d1, c1);
        out.t_grid[k] = t0;
        out.A[k + 1] = out.A[k] + h / 6.0 * (d_prev * d_prev + 4.0 * dm * dm + d1 * d1);
        out.B[k + 1] =
            out.B[k] + h / 6.0 * (std::abs(c_prev) + 4.0 * std::abs(cm) + std::abs(c1));
        d_prev = d1;
        c_prev = c1;
    }
    out.t_grid[n_steps] = horizon;

    out.window_start = horizon / 10.0;
    out.window_end = horizon;
    out.S_sup = -INFINITY;
    out.S_inf = INFINITY;
    for (std::size_t k = 1; k <= n_steps; ++k) {
        const double t = out.t_grid[k];
        if (t < out.window_start) continue;
        const double ratio = out.A[k] / t;
        out.S_sup = std::max(out.S_sup, ratio);
        out.S_inf = std::min(out.S_inf, ratio);
    }
    return out;
}

void write_functionals_csv(std::ostream& out, const PathFunctionals& fn, std::size_t stride) {
    stride = std::max<std::size_t>(stride, 1);
    out << "t,A,B,A_over_t,B_over_t\n";
    const std::size_t n = fn.t_grid.size();
    for (std::size_t k = 0; k < n; k = (k + 1 == n) ? n : std::min(k + stride, n - 1)) {
        const double t = fn.t_grid[k];
        const double a_rate = t > 0 ? fn.A[k] / t : 0.0;
        const double b_rate = t > 0 ? fn.B[k] / t : 0.0;
        out << format_shortest(t) << ',' << format_shortest(fn.A[k]) << ','
            << format_shortest(fn.B[k]) << ',' << format_shortest(a_rate) << ','
            << format_shortest(b_rate) << '\n';
    }
}

std::string_view to_string(Regime regime) {
    switch (regime) {
        case Regime::Extinction: return "EXTINCTION";
        case Regime::Supercritical: return "SUPERCRITICAL";
        case Regime::CriticalUndetermined: return "CRITICAL_UNDETERMINED";
    }
    return "?";
}

double tube_cost(double L) {
    if (std::isinf(L)) return 0.0;
    return std::numbers::pi * std::numbers::pi / (8.0 * L * L);
}

RatePrediction predict_rates(const PathFunctionals& fn, double r, double L) {
    if (!(r > 0.0) || !(L > 0.0)) throw DomainError("predict_rates needs r > 0 and L > 0");
    RatePrediction p;
    p.r = r;
    p.L = L;
    const double base = r - tube_cost(L);
    p.S_tilde = base - 0.5 * fn.S_sup;
    p.rate_limsup = base - 0.5 * fn.S_inf;
    p.rate_liminf = base - 0.5 * fn.S_sup;
    if (p.S_tilde < 0.0) {
        p.regime = Regime::Extinction;
    } else if (p.S_tilde > 0.0) {
        p.regime = Regime::Supercritical;
    } else {
        p.regime = Regime::CriticalUndetermined;
    }
    p.window_start = fn.window_start;
    p.window_end = fn.window_end;
    return p;
}

RatePrediction predict_rates(const PathSpec& spec, double r, double L, double horizon,
                             std::size_t n_steps) {
    return predict_rates(accumulate_functionals(spec, horizon, n_steps), r, L);
}

TResult compute_T(const PathSpec& spec, double r, double L, double p, double horizon,
                  std::size_t n_steps) {
    if (!(p >= 0.0 && p < 1.0)) throw DomainError("compute_T needs p in [0, 1)");
    if (!(r > 0.0) || !(L > 0.0)) throw DomainError("compute_T needs r > 0 and L > 0");

    const auto fn = accumulate_functionals(spec, horizon, n_steps);
    const auto prediction = predict_rates(fn, r, L);
    TResult result;
    result.grid_spacing = fn.step;
    result.S_tilde = prediction.S_tilde;
    if (!(prediction.S_tilde > 0.0)) {
        throw DomainError("compute_T needs S~ > 0 (got " + format_shortest(prediction.S_tilde) +
                          ")");
    }

    // G(s) = (r - pi^2/8L^2) s - A(s)/2 - 2L B(s) - 2L|f'(0)|
    const double base = r - tube_cost(L);
    const double start_penalty = 2.0 * L * std::abs(spec.df(0.0));
    const double target_rate = p * prediction.S_tilde;
    auto holds = [&](std::size_t k) {
        const double s = fn.t_grid[k];
        const double g = base * s - 0.5 * fn.A[k] - 2.0 * L * fn.B[k] - start_penalty;
        return g >= target_rate * s;
    };

    const std::size_t last = fn.t_grid.size() - 1;
    if (!holds(last)) return result;
    std::size_t k = last;
    while (k > 0 && holds(k - 1)) --k;
    result.time = fn.t_grid[k];
    return result;
}

}  // namespace bbmtube
