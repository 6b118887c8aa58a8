#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace bbmtube {

struct MeanEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    double variance = 0.0;  // sample variance (n - 1 denominator)
    std::size_t n = 0;
};

MeanEstimate estimate_mean(std::span<const double> values);

// Ordinary least-squares slope of y against x.
double ols_slope(std::span<const double> x, std::span<const double> y);

// Upper tail probability of a chi-square variate with `dof` degrees of freedom.
double chi2_survival(double statistic, double dof);

// Linear-interpolated empirical quantile, q in [0, 1].
double quantile(std::vector<double> values, double q);

// 95% normal-approximation half-width of a binomial proportion.
double binomial_halfwidth(double p_hat, std::size_t n);

}  // namespace bbmtube
