#ifndef RPCOVA_ATT_HPP
#define RPCOVA_ATT_HPP

#include "rpcova/identify.hpp"

#include <optional>
#include <span>
#include <vector>

namespace rpcova {

/// Sample averages of tau_hat_-(X_i) and tau_hat_+(X_i).
struct AttEstimate {
  double att_minus = 0.0;
  double att_plus = 0.0;
  double e_beta = 0.0;       ///< mean of beta_C(X_i)
  double e_abs_delta = 0.0;  ///< mean of sqrt(Delta^2(X_i))
  Index n_used = 0;
  Index n = 0;
};

/// Averages over every sample point where the estimate succeeds. Throws
/// Error(TooFewPoints) when fewer than 80% of the points succeed.
AttEstimate att_two_point(const TwoPointEstimator& estimator);
AttEstimate att_two_point(const Dataset& data, const ResistantSample& resistant, const BandwidthSet& bw,
                          const EstimatorOptions& options);

struct SignDiagnosticOptions {
  Index max_draws = 200;
  double cutoff = 0.0;  ///< pass requires every grid mean to exceed this
};

struct CoordinateReport {
  int coordinate = 0;  ///< zero-based
  std::vector<double> grid;
  std::vector<double> mean_delta2;  ///< NaN where every draw failed
  std::vector<Index> draws_used;
  double min_mean = 0.0;
  bool pass = false;
};

struct SignDiagnostic {
  std::vector<CoordinateReport> coordinates;
  bool pass = false;
};

/// For each coordinate j and grid value v, averages Delta_hat^2 over sample
/// rows with coordinate j pinned to v. Rows are evenly spaced over the sample,
/// at most max_draws of them. Failed draws are excluded.
SignDiagnostic att_sign_diagnostic(const TwoPointEstimator& estimator,
                                   const std::vector<std::vector<double>>& coordinate_grids,
                                   const SignDiagnosticOptions& options = {});

struct ConstantEffectResult {
  double tau_minus = 0.0;
  double tau_plus = 0.0;
  double mean_difference = 0.0;
  double s2_pooled = 0.0;
  double gap = 0.0;  ///< sigma0^2 - S^2_pooled before clamping
  bool clamped = false;
  std::optional<double> variance;
};

/// Closed-form two-point estimate under a constant effect. Throws
/// Error(ArmTooSmall) unless each arm has at least two observations.
ConstantEffectResult constant_effect_estimate(std::span<const double> y_t, std::span<const double> y_c,
                                              double sigma02_hat);

/// Large-sample variance of either branch. Throws Error(DegenerateGap) when
/// sigma02_hat <= S^2_pooled.
double constant_effect_variance(std::span<const double> y_t, std::span<const double> y_c, double sigma02_hat,
                                double var_sigma02_hat);

/// Two-sample t variance S_t^2/n_t + S_c^2/n_c; a lower bound for the above.
double two_sample_variance(std::span<const double> y_t, std::span<const double> y_c);

/// y - x * coef, for covariate adjustment before the constant-effect formulas.
VectorXd residualize(const VectorRef& y, const MatrixRef& x, const VectorRef& coef);

/// Sample variance of a resistant outcome and the plug-in variance of that
/// estimate, (M4 - S^4) / m.
struct ResistantMoments {
  double sigma02 = 0.0;
  double var_sigma02 = 0.0;
};
ResistantMoments resistant_moments(std::span<const double> y);

}  // namespace rpcova

#endif  // RPCOVA_ATT_HPP
