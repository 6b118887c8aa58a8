#include "bbmtube/stats.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/special_functions/gamma.hpp>

#include "bbmtube/errors.hpp"

namespace bbmtube {

MeanEstimate estimate_mean(std::span<const double> values) {
    MeanEstimate est;
    est.n = values.size();
    if (values.empty()) return est;
    // Welford
    double mean = 0.0, m2 = 0.0;
    std::size_t k = 0;
    for (double v : values) {
        ++k;
        const double delta = v - mean;
        mean += delta / static_cast<double>(k);
        m2 += delta * (v - mean);
    }
    est.mean = mean;
    if (est.n > 1) {
        est.variance = m2 / static_cast<double>(est.n - 1);
        est.std_error = std::sqrt(est.variance / static_cast<double>(est.n));
    }
    return est;
}

double ols_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw EstimationError("ols_slope needs two or more paired points");
    }
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) throw EstimationError("ols_slope: all x values coincide");
    return sxy / sxx;
}

double chi2_survival(double statistic, double dof) {
    if (statistic <= 0.0) return 1.0;
    return boost::math::gamma_q(0.5 * dof, 0.5 * statistic);
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw EstimationError("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

double binomial_halfwidth(double p_hat, std::size_t n) {
    if (n == 0) return INFINITY;
    return 1.959963984540054 * std::sqrt(p_hat * (1.0 - p_hat) / static_cast<double>(n));
}

}  // namespace bbmtube
