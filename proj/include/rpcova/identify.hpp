#ifndef RPCOVA_IDENTIFY_HPP
#define RPCOVA_IDENTIFY_HPP

#include "rpcova/kernel.hpp"
#include "rpcova/local_linear.hpp"
#include "rpcova/smoother.hpp"

#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace rpcova {

/// Squared identification bias
///   Delta^2 = beta^2 - (sigma^2 - sigma_0^2) / (pi (1 - pi)),
/// clamped at zero. Throws Error(InvalidPropensity) unless pi is in (0, 1).
double delta_squared(double beta, double sigma2, double sigma02, double pi);

/// Two-point estimate of the CATT at one covariate value. The target is
/// one of tau_minus / tau_plus; which one is not identified by the data.
struct TwoPointFit {
  VectorXd x;
  double beta_C = 0.0;
  double beta_U = 0.0;
  double s_hat = 0.0;
  double delta2 = 0.0;
  double tau_minus = 0.0;
  double tau_plus = 0.0;
  bool boundary = false;
  MomentEstimates moments;
  /// Unconstrained arm intercepts mu_0(x), mu_1(x).
  double mu0_hat = 0.0;
  double mu1_hat = 0.0;
};

struct EstimatorOptions {
  KernelSpec kernel;
  double pi_clip = 0.05;
  ResistantMode resistant_mode = ResistantMode::Heteroscedastic;
};

/// The four-stage estimator with the sample-level caches it needs: mean
/// residuals for the variance fit, the resistant-variance model, and (on
/// demand) arm residuals for the plug-in variance components. Evaluation at
/// a point is const and may run concurrently.
class TwoPointEstimator {
 public:
  TwoPointEstimator(Dataset data, ResistantSample resistant, BandwidthSet bandwidths, EstimatorOptions options);

  /// Throws Error annotated with the failing stage.
  TwoPointFit estimate(const VectorRef& x) const;

  const Dataset& data() const { return data_; }
  const ResistantSample& resistant() const { return resistant_; }
  const BandwidthSet& bandwidths() const { return bw_; }
  const EstimatorOptions& options() const { return options_; }
  const LocalDesign& design() const { return design_; }

  /// e_i = Y_i - m_hat(X_i) with bandwidth h1 (NaN where the fit failed).
  const VectorXd& residuals() const { return residuals_; }
  /// e_i^(Z_i) = Y_i - m_hat_{Z_i}(X_i) from the unconstrained arm fit.
  const VectorXd& arm_residuals() const;
  /// Scale of the outcome used for numeric floors (sample sd of y).
  double outcome_scale() const { return outcome_scale_; }

 private:
  Dataset data_;
  ResistantSample resistant_;
  BandwidthSet bw_;
  EstimatorOptions options_;
  LocalDesign design_;
  VectorXd residuals_;
  ResistantVariance sigma0_;
  double outcome_scale_ = 1.0;
  mutable std::once_flag arm_once_;
  mutable VectorXd arm_residuals_;
};

/// One-shot convenience wrapper around TwoPointEstimator.
TwoPointFit two_point_estimate(const Dataset& data, const ResistantSample& resistant, const VectorRef& x,
                               const BandwidthSet& bw, const EstimatorOptions& options);

struct GridPoint {
  VectorXd x;
  std::optional<TwoPointFit> fit;
  std::string failure;
};

/// Per-point estimates; failures are recorded rather than thrown.
std::vector<GridPoint> estimate_grid(const TwoPointEstimator& estimator, const std::vector<VectorXd>& grid);

}  // namespace rpcova

#endif  // RPCOVA_IDENTIFY_HPP
