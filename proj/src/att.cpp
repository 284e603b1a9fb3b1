#include "rpcova/att.hpp"

#include "rpcova/error.hpp"
#include "rpcova/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rpcova {

AttEstimate att_two_point(const TwoPointEstimator& estimator) {
  const MatrixXd& X = estimator.data().x;
  const Index n = X.rows();
  AttEstimate out;
  out.n = n;
  double sum_beta = 0.0;
  double sum_gap = 0.0;
  for (Index i = 0; i < n; ++i) {
    try {
      const TwoPointFit fit = estimator.estimate(X.row(i).transpose());
      sum_beta += fit.beta_C;
      sum_gap += std::sqrt(fit.delta2);
      ++out.n_used;
    } catch (const Error&) {
    }
  }
  if (static_cast<double>(out.n_used) < 0.8 * static_cast<double>(n)) {
    throw Error(ErrorCode::TooFewPoints, "estimate succeeded at " + std::to_string(out.n_used) + " of " +
                                             std::to_string(n) + " sample points; bandwidths may be too small");
  }
  const auto used = static_cast<double>(out.n_used);
  out.e_beta = sum_beta / used;
  out.e_abs_delta = sum_gap / used;
  out.att_minus = out.e_beta - out.e_abs_delta;
  out.att_plus = out.e_beta + out.e_abs_delta;
  return out;
}

AttEstimate att_two_point(const Dataset& data, const ResistantSample& resistant, const BandwidthSet& bw,
                          const EstimatorOptions& options) {
  return att_two_point(TwoPointEstimator(data, resistant, bw, options));
}

SignDiagnostic att_sign_diagnostic(const TwoPointEstimator& estimator,
                                   const std::vector<std::vector<double>>& coordinate_grids,
                                   const SignDiagnosticOptions& options) {
  const MatrixXd& X = estimator.data().x;
  const Index n = X.rows();
  const Index d = X.cols();
  if (static_cast<Index>(coordinate_grids.size()) != d) {
    throw Error(ErrorCode::InvalidArgument, "need one grid per covariate coordinate");
  }
  if (options.max_draws < 1) throw Error(ErrorCode::InvalidArgument, "max_draws must be positive");

  const Index draws = std::min(n, options.max_draws);
  std::vector<Index> rows(static_cast<std::size_t>(draws));
  for (Index k = 0; k < draws; ++k) rows[static_cast<std::size_t>(k)] = k * n / draws;

  SignDiagnostic out;
  out.pass = true;
  for (Index j = 0; j < d; ++j) {
    CoordinateReport report;
    report.coordinate = static_cast<int>(j);
    report.grid = coordinate_grids[static_cast<std::size_t>(j)];
    report.min_mean = std::numeric_limits<double>::infinity();
    for (double v : report.grid) {
      double sum = 0.0;
      Index used = 0;
      for (Index r : rows) {
        VectorXd x = X.row(r).transpose();
        x(j) = v;
        try {
          sum += estimator.estimate(x).delta2;
          ++used;
        } catch (const Error&) {
        }
      }
      const double mean = used > 0 ? sum / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
      report.mean_delta2.push_back(mean);
      report.draws_used.push_back(used);
      // A grid value with no successful draw counts as a failure.
      report.min_mean = std::isnan(mean) ? mean : std::min(report.min_mean, mean);
      if (std::isnan(report.min_mean)) break;
    }
    report.pass = !report.grid.empty() && report.min_mean > options.cutoff;
    out.pass = out.pass && report.pass;
    out.coordinates.push_back(std::move(report));
  }
  return out;
}

namespace {

struct ArmSummary {
  double n = 0.0;
  double mean = 0.0;
  double s2 = 0.0;  ///< divisor n - 1
  double m4 = 0.0;  ///< divisor n
};

ArmSummary summarize(std::span<const double> y) {
  ArmSummary a;
  a.n = static_cast<double>(y.size());
  for (double v : y) a.mean += v;
  a.mean /= a.n;
  a.s2 = sample_variance(y);
  for (double v : y) a.m4 += std::pow(v - a.mean, 4);
  a.m4 /= a.n;
  return a;
}

void check_arms(std::span<const double> y_t, std::span<const double> y_c) {
  if (y_t.size() < 2 || y_c.size() < 2) {
    throw Error(ErrorCode::ArmTooSmall, "each arm needs at least two observations");
  }
}

double pooled(const ArmSummary& t, const ArmSummary& c) {
  return ((t.n - 1.0) * t.s2 + (c.n - 1.0) * c.s2) / (t.n + c.n - 2.0);
}

}  // namespace

ConstantEffectResult constant_effect_estimate(std::span<const double> y_t, std::span<const double> y_c,
                                              double sigma02_hat) {
  check_arms(y_t, y_c);
  const ArmSummary t = summarize(y_t);
  const ArmSummary c = summarize(y_c);
  ConstantEffectResult out;
  out.mean_difference = t.mean - c.mean;
  out.s2_pooled = pooled(t, c);
  out.gap = sigma02_hat - out.s2_pooled;
  out.clamped = out.gap < 0.0;
  const double n = t.n + c.n;
  const double half = n / std::sqrt(t.n * c.n) * std::sqrt(std::max(0.0, out.gap));
  out.tau_minus = out.mean_difference - half;
  out.tau_plus = out.mean_difference + half;
  return out;
}

double constant_effect_variance(std::span<const double> y_t, std::span<const double> y_c, double sigma02_hat,
                                double var_sigma02_hat) {
  check_arms(y_t, y_c);
  const ArmSummary t = summarize(y_t);
  const ArmSummary c = summarize(y_c);
  const double gap = sigma02_hat - pooled(t, c);
  if (!(gap > 0.0)) throw Error(ErrorCode::DegenerateGap, "sigma0^2 does not exceed the pooled variance");
  const double n = t.n + c.n;
  const double bracket = var_sigma02_hat + t.n / (n * n) * (t.m4 - t.s2 * t.s2) + c.n / (n * n) * (c.m4 - c.s2 * c.s2);
  const double value = t.s2 / t.n + c.s2 / c.n + n * n / (4.0 * t.n * c.n * gap) * bracket;
  return std::max(0.0, value);
}

double two_sample_variance(std::span<const double> y_t, std::span<const double> y_c) {
  check_arms(y_t, y_c);
  return sample_variance(y_t) / static_cast<double>(y_t.size()) +
         sample_variance(y_c) / static_cast<double>(y_c.size());
}

VectorXd residualize(const VectorRef& y, const MatrixRef& x, const VectorRef& coef) {
  if (x.rows() != y.size() || x.cols() != coef.size()) {
    throw Error(ErrorCode::InvalidArgument, "residualize: dimension mismatch");
  }
  return y - x * coef;
}

ResistantMoments resistant_moments(std::span<const double> y) {
  if (y.size() < 2) throw Error(ErrorCode::ArmTooSmall, "resistant sample needs at least two observations");
  const ArmSummary a = summarize(y);
  return {a.s2, std::max(0.0, (a.m4 - a.s2 * a.s2) / a.n)};
}

}  // namespace rpcova
