#pragma once

// Paths f around which the tube {|x - f(t)| < L} is drawn, the deterministic
// functionals of f that control particle growth, and the built-in catalog.

#include <array>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bbmtube {

using RealFn = std::function<double(double)>;

struct PathSpec {
    std::string name;  // catalog key including parameters, e.g. "linear:lambda=0.5"
    RealFn f;
    RealFn df;
    RealFn d2f;
    std::map<std::string, double> params;
    bool usual_conditions_expected = true;
};

struct PathPoint {
    double position;
    double slope;
    double curvature;
};

PathPoint eval_path(const PathSpec& spec, double t);

// --- catalog -------------------------------------------------------------

PathSpec zero_path();
PathSpec linear_path(double lambda);
PathSpec sinlog_path(double lambda);
// (t + eps)^beta - eps^beta
PathSpec power_path(double beta, double eps = 1.0);
PathSpec log_path();
// sqrt(2 r) t - c ((t + eps)^beta - eps^beta); S(f) = 2r by construction.
PathSpec critical_path(double r, double c, double beta, double eps = 1.0);
// Slope 0 on [4^k, 2*4^k), slope 1 on [2*4^k, 4^(k+1)); not C^2.
PathSpec dyadic_path();
// C^2 version of dyadic_path: a cubic-smoothstep slope ramp centred on each
// switch 2^n, of width window_fraction * 2^(n-1).
PathSpec dyadic_smooth_path(double window_fraction = 0.01);
// sin(t / delta)
PathSpec sinfreq_path(double delta);
// delta * sin(t / delta)
PathSpec tinysin_path(double delta);

PathSpec negate_path(const PathSpec& spec);
// g(s) = f(s + t0) - f(t0)
PathSpec shift_path(const PathSpec& spec, double t0);

// Parses keys such as "linear:lambda=0.5", "power:beta=0.5,eps=1", "dyadic".
// Throws ConfigError on unknown keys or parameters.
PathSpec make_path(std::string_view key);

struct CatalogEntry {
    std::string key;  // with default parameters
    std::string description;
};
std::vector<CatalogEntry> path_catalog();

// --- functionals ---------------------------------------------------------

struct PathFunctionals {
    std::vector<double> t_grid;
    std::vector<double> A;  // int_0^t f'(s)^2 ds
    std::vector<double> B;  // int_0^t |f''(s)| ds
    double S_sup = 0.0;     // max A(t)/t over the tail window
    double S_inf = 0.0;     // min A(t)/t over the tail window
    double window_start = 0.0;
    double window_end = 0.0;
    double step = 0.0;
};

// Composite Simpson on a uniform grid of n_steps intervals (each interval is
// integrated with its midpoint). Tail window is [horizon/10, horizon].
PathFunctionals accumulate_functionals(const PathSpec& spec, double horizon, std::size_t n_steps);

void write_functionals_csv(std::ostream& out, const PathFunctionals& fn, std::size_t stride = 1);

enum class Regime { Extinction, Supercritical, CriticalUndetermined };
std::string_view to_string(Regime regime);

struct RatePrediction {
    double r = 0.0;
    double L = 0.0;
    double S_tilde = 0.0;
    double rate_limsup = 0.0;
    double rate_liminf = 0.0;
    Regime regime = Regime::CriticalUndetermined;
    double window_start = 0.0;
    double window_end = 0.0;
};

// pi^2 / (8 L^2); zero for an infinite tube.
double tube_cost(double L);

RatePrediction predict_rates(const PathFunctionals& fn, double r, double L);
RatePrediction predict_rates(const PathSpec& spec, double r, double L, double horizon,
                             std::size_t n_steps = std::size_t{1} << 20);

struct TResult {
    std::optional<double> time;  // empty: not attained within the horizon
    double grid_spacing = 0.0;
    double S_tilde = 0.0;
};

// Smallest grid time t such that
//   int_0^s (r - pi^2/8L^2 - f'^2/2 - 2L|f''|) du - 2L|f'(0)| >= p S~ s
// for every grid s in [t, horizon].
TResult compute_T(const PathSpec& spec, double r, double L, double p, double horizon,
                  std::size_t n_steps = std::size_t{1} << 18);

struct UsualConditionsReport {
    double f0_abs = 0.0;
    double derivative_mismatch = 0.0;  // max relative FD mismatch, f vs f' and f' vs f''
    std::array<double, 4> checkpoints{};
    std::array<double, 4> b_ratio{};  // B(t)/t at horizon/8, /4, /2, 1
    double tolerance = 1e-2;
    bool condition1 = false;
    bool condition2_plausible = false;
    bool condition3_plausible = false;
    bool passes() const { return condition1 && condition2_plausible && condition3_plausible; }
};

UsualConditionsReport check_usual_conditions(const PathSpec& spec, double horizon,
                                             double tolerance = 1e-2);

struct SandwichTubes {
    double L_upper;
    double L_lower;
    double distance;
};

// Tube half-widths around fn for which the fn-tube contains (upper) or is
// contained in (lower) the f-tube of half-width L.
SandwichTubes sandwich_tubes(const PathSpec& f_spec, const PathSpec& fn_spec, double L,
                             double horizon, std::size_t n_grid = 200000);

// --- grid tables ---------------------------------------------------------

// f, f', f'' and the cumulative functionals on the simulation grid t_k = k dt.
struct PathTable {
    double dt = 0.0;
    std::vector<double> f, df, d2f, A, B;
    double max_abs_d2f = 0.0;
    std::size_t size() const { return f.size(); }
};

PathTable tabulate(const PathSpec& spec, double dt, std::size_t n_steps);

}  // namespace bbmtube
