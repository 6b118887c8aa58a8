#include "bbmtube/path.hpp"

#include <charconv>
#include <cmath>
#include <string>

#include "bbmtube/errors.hpp"
#include "util.hpp"

namespace bbmtube {
namespace {

std::string key_with(std::string_view base, std::initializer_list<std::pair<const char*, double>> params) {
    std::string key(base);
    char sep = ':';
    for (const auto& [name, value] : params) {
        key += sep;
        key += name;
        key += '=';
        key += format_shortest(value);
        sep = ',';
    }
    return key;
}

// Slope of the exact dyadic path: 1 on [2^(2k+1), 2^(2k+2)), else 0.
double dyadic_slope(double t) {
    if (t < 2.0) return 0.0;
    int exponent = 0;
    std::frexp(t, &exponent);  // t = m 2^exponent, m in [0.5, 1)
    const int n = exponent - 1;  // floor(log2 t)
    return (n % 2 == 1) ? 1.0 : 0.0;
}

double dyadic_position(double t) {
    double total = 0.0;
    for (double lo = 2.0; lo < t; lo *= 4.0) {
        total += std::min(t, 2.0 * lo) - lo;
    }
    return total;
}

double smoothstep(double x) { return x * x * (3.0 - 2.0 * x); }
double smoothstep_integral(double x) { return x * x * x - 0.5 * x * x * x * x; }
double smoothstep_derivative(double x) { return 6.0 * x * (1.0 - x); }

struct Ramp {
    double centre;
    double width;
    double from;
    double to;
};

// The ramp whose window contains t, if any. Switch 2^n goes 0 -> 1 for odd n.
std::optional<Ramp> active_ramp(double t, double fraction) {
    if (t < 1.0) return std::nullopt;
    int exponent = 0;
    std::frexp(t, &exponent);
    for (int n : {exponent - 1, exponent}) {
        if (n < 1) continue;
        const double centre = std::ldexp(1.0, n);
        const double width = fraction * std::ldexp(1.0, n - 1);
        if (std::abs(t - centre) < 0.5 * width) {
            const double from = (n % 2 == 1) ? 0.0 : 1.0;
            return Ramp{centre, width, from, 1.0 - from};
        }
    }
    return std::nullopt;
}

}  // namespace

PathSpec zero_path() {
    return {"zero", [](double) { return 0.0; }, [](double) { return 0.0; },
            [](double) { return 0.0; }, {}, true};
}

PathSpec linear_path(double lambda) {
    return {key_with("linear", {{"lambda", lambda}}),
            [lambda](double t) { return lambda * t; },
            [lambda](double) { return lambda; },
            [](double) { return 0.0; },
            {{"lambda", lambda}},
            true};
}

PathSpec sinlog_path(double lambda) {
    return {key_with("sinlog", {{"lambda", lambda}}),
            [lambda](double t) { return lambda * (t + 1.0) * std::sin(std::log1p(t)); },
            [lambda](double t) {
                const double u = std::log1p(t);
                return lambda * (std::sin(u) + std::cos(u));
            },
            [lambda](double t) {
                const double u = std::log1p(t);
                return lambda * (std::cos(u) - std::sin(u)) / (t + 1.0);
            },
            {{"lambda", lambda}},
            true};
}

PathSpec power_path(double beta, double eps) {
    if (!(beta > 0.0 && beta < 1.0) || !(eps > 0.0)) {
        throw ConfigError("power path needs 0 < beta < 1 and eps > 0");
    }
    const double offset = std::pow(eps, beta);
    return {key_with("power", {{"beta", beta}, {"eps", eps}}),
            [=](double t) { return std::pow(t + eps, beta) - offset; },
            [=](double t) { return beta * std::pow(t + eps, beta - 1.0); },
            [=](double t) { return beta * (beta - 1.0) * std::pow(t + eps, beta - 2.0); },
            {{"beta", beta}, {"eps", eps}},
            true};
}

PathSpec log_path() {
    return {"log", [](double t) { return std::log1p(t); },
            [](double t) { return 1.0 / (1.0 + t); },
            [](double t) { return -1.0 / ((1.0 + t) * (1.0 + t)); }, {}, true};
}

PathSpec critical_path(double r, double c, double beta, double eps) {
    if (!(r > 0.0)) throw ConfigError("critical path needs r > 0");
    const PathSpec g = power_path(beta, eps);
    const double speed = std::sqrt(2.0 * r);
    return {key_with("critical", {{"r", r}, {"c", c}, {"beta", beta}, {"eps", eps}}),
            [=, f = g.f](double t) { return speed * t - c * f(t); },
            [=, df = g.df](double t) { return speed - c * df(t); },
            [=, d2f = g.d2f](double t) { return -c * d2f(t); },
            {{"r", r}, {"c", c}, {"beta", beta}, {"eps", eps}},
            true};
}

PathSpec dyadic_path() {
    return {"dyadic", dyadic_position, dyadic_slope, [](double) { return 0.0; }, {}, false};
}

PathSpec dyadic_smooth_path(double fraction) {
    if (!(fraction > 0.0 && fraction <= 0.5)) {
        throw ConfigError("dyadic smoothing window fraction must lie in (0, 0.5]");
    }
    auto position = [fraction](double t) {
        double value = dyadic_position(t);
        if (const auto ramp = active_ramp(t, fraction)) {
            const double start = ramp->centre - 0.5 * ramp->width;
            const double x = (t - start) / ramp->width;
            value += (ramp->to - ramp->from) *
                     (ramp->width * smoothstep_integral(x) - std::max(0.0, t - ramp->centre));
        }
        return value;
    };
    auto slope = [fraction](double t) {
        if (const auto ramp = active_ramp(t, fraction)) {
            const double x = (t - ramp->centre) / ramp->width + 0.5;
            return ramp->from + (ramp->to - ramp->from) * smoothstep(x);
        }
        return dyadic_slope(t);
    };
    auto curvature = [fraction](double t) {
        if (const auto ramp = active_ramp(t, fraction)) {
            const double x = (t - ramp->centre) / ramp->width + 0.5;
            return (ramp->to - ramp->from) * smoothstep_derivative(x) / ramp->width;
        }
        return 0.0;
    };
    return {key_with("dyadic_smooth", {{"w", fraction}}), position, slope, curvature,
            {{"w", fraction}}, true};
}

PathSpec sinfreq_path(double delta) {
    if (!(delta > 0.0)) throw ConfigError("sinfreq path needs delta > 0");
    return {key_with("sinfreq", {{"delta", delta}}),
            [delta](double t) { return std::sin(t / delta); },
            [delta](double t) { return std::cos(t / delta) / delta; },
            [delta](double t) { return -std::sin(t / delta) / (delta * delta); },
            {{"delta", delta}},
            false};
}

PathSpec tinysin_path(double delta) {
    if (!(delta > 0.0)) throw ConfigError("tinysin path needs delta > 0");
    return {key_with("tinysin", {{"delta", delta}}),
            [delta](double t) { return delta * std::sin(t / delta); },
            [delta](double t) { return std::cos(t / delta); },
            [delta](double t) { return -std::sin(t / delta) / delta; },
            {{"delta", delta}},
            false};
}

std::vector<CatalogEntry> path_catalog() {
    return {
        {"zero", "f(t) = 0"},
        {"linear:lambda=0.5", "f(t) = lambda t"},
        {"sinlog:lambda=1", "f(t) = lambda (t+1) sin(log(t+1)); oscillating growth"},
        {"power:beta=0.5,eps=1", "f(t) = (t+eps)^beta - eps^beta"},
        {"log", "f(t) = log(t+1)"},
        {"critical:r=1,c=1,beta=0.5,eps=1", "f(t) = sqrt(2r) t - c((t+eps)^beta - eps^beta)"},
        {"dyadic", "slope 0 on [4^k, 2 4^k), 1 on [2 4^k, 4^(k+1)); exact, not C^2"},
        {"dyadic_smooth:w=0.01", "dyadic with smoothstep slope ramps of relative width w"},
        {"sinfreq:delta=0.1", "f(t) = sin(t/delta); violates condition (3)"},
        {"tinysin:delta=0.1", "f(t) = delta sin(t/delta); violates condition (3)"},
    };
}

PathSpec make_path(std::string_view key) {
    const auto colon = key.find(':');
    const std::string base(key.substr(0, colon));
    std::map<std::string, double> params;
    if (colon != std::string_view::npos) {
        for (const auto& item : split(key.substr(colon + 1), ',')) {
            const auto eq = item.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("path parameter without value in '" + std::string(key) + "'");
            }
            const std::string name = trim(item.substr(0, eq));
            params[name] = parse_double(trim(item.substr(eq + 1)), name);
        }
    }
    auto take = [&](const char* name, std::optional<double> fallback) {
        const auto it = params.find(name);
        if (it == params.end()) {
            if (!fallback) {
                throw ConfigError("path '" + base + "' needs parameter '" + name + "'");
            }
            return *fallback;
        }
        const double value = it->second;
        params.erase(it);
        return value;
    };

    PathSpec spec;
    if (base == "zero") {
        spec = zero_path();
    } else if (base == "linear") {
        spec = linear_path(take("lambda", std::nullopt));
    } else if (base == "sinlog") {
        spec = sinlog_path(take("lambda", 1.0));
    } else if (base == "power") {
        const double beta = take("beta", std::nullopt);
        spec = power_path(beta, take("eps", 1.0));
    } else if (base == "log") {
        spec = log_path();
    } else if (base == "critical") {
        const double r = take("r", 1.0);
        const double c = take("c", 1.0);
        const double beta = take("beta", 0.5);
        spec = critical_path(r, c, beta, take("eps", 1.0));
    } else if (base == "dyadic") {
        spec = dyadic_path();
    } else if (base == "dyadic_smooth") {
        spec = dyadic_smooth_path(take("w", 0.01));
    } else if (base == "sinfreq") {
        spec = sinfreq_path(take("delta", std::nullopt));
    } else if (base == "tinysin") {
        spec = tinysin_path(take("delta", std::nullopt));
    } else {
        throw ConfigError("unknown path '" + base + "'");
    }
    if (!params.empty()) {
        throw ConfigError("unknown parameter '" + params.begin()->first + "' for path '" + base +
                          "'");
    }
    return spec;
}

}  // namespace bbmtube
