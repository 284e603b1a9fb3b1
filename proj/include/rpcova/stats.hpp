#ifndef RPCOVA_STATS_HPP
#define RPCOVA_STATS_HPP

#include <Eigen/Dense>

#include <span>

namespace rpcova {

double normal_cdf(double x);

/// Inverse standard normal CDF; accurate to a few ulps on (0, 1).
double normal_quantile(double p);

/// Ordinary least squares of y on [1, X]; returns (intercept, coefficients).
Eigen::VectorXd ols_fit(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y);

/// Sample variance with divisor n - 1.
double sample_variance(std::span<const double> values);

/// Least-squares slope of ys on xs.
double regression_slope(std::span<const double> xs, std::span<const double> ys);

}  // namespace rpcova

#endif  // RPCOVA_STATS_HPP
