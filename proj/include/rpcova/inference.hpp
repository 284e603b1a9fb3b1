#ifndef RPCOVA_INFERENCE_HPP
#define RPCOVA_INFERENCE_HPP

#include "rpcova/identify.hpp"

#include <optional>
#include <string_view>

namespace rpcova {

/// Plug-in ingredients of the asymptotic variances at one x.
struct VarComponents {
  double nu0_sq = 0.0;  ///< Var(Y | Z=0, X=x)
  double nu1_sq = 0.0;  ///< Var(Y | Z=1, X=x)
  double lambda_sq = 0.0;  ///< E{(eps^2 - 1)^2 | X=x}
  double eta0 = 0.0;  ///< E{xi_0 eps^2 | Z=0, X=x}
  double eta1 = 0.0;
  double f_hat = 0.0;
  double pi_hat = 0.5;
  double sigma2_hat = 0.0;
  double beta_hat = 0.0;
  double theta_K_d = 1.0;
  double alpha2_d = 1.0;
  double alpha3_d = 1.0;
  double alpha4_d = 1.0;
};

/// Nadaraya-Watson plug-ins for lambda^2 and eta_z plus local-linear arm
/// variances. Throws Error(DegenerateVariance) when sigma_hat^2 is
/// numerically zero and Error(EmptyNeighborhood) when an arm has no kernel
/// mass at x.
VarComponents estimate_components(const TwoPointEstimator& estimator, const TwoPointFit& fit);

/// Unclamped v_Delta^2; the cross term can make finite-sample plug-ins
/// negative.
double v_delta_sq_raw(const VarComponents& c);

/// max(0, v_delta_sq_raw). Throws Error(InvalidPropensity) or
/// Error(ZeroDensity) on invalid inputs.
double v_delta_sq(const VarComponents& c);

/// v_{tau,+-}^2 at tau_pm; interior regime only (Error(ZeroDelta) when
/// delta2 <= 0).
double v_tau_sq(const VarComponents& c, double delta2, double tau_pm);

/// Variance of the unconstrained arm difference.
double v_beta_u_sq(const VarComponents& c);

enum class Regime { Interior, Boundary };
std::string_view to_string(Regime regime);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  double length() const { return upper - lower; }
  bool contains(double v) const { return lower <= v && v <= upper; }
};

struct CiOptions {
  double alpha_level = 0.05;
  double delta_exponent = 1.0 / 3.0;
};

struct CiPair {
  Interval ci_minus;
  Interval ci_plus;
  Regime regime = Regime::Boundary;
  double v_delta = 0.0;  ///< sqrt(v_Delta^2)
  bool v_delta_clamped = false;
  std::optional<double> v_tau_minus;
  std::optional<double> v_tau_plus;
  std::optional<double> v_beta_U;
  double threshold = 0.0;  ///< v_delta / (n h^d)^{(1 - delta)/2}
  double alpha_level = 0.05;
  double delta_exponent = 1.0 / 3.0;
};

/// Regime-switching intervals. If Delta_hat^2 exceeds
/// v_delta / (n h^d)^{(1-delta)/2} the intervals are centred at tau_hat_-
/// and tau_hat_+ with half-widths z v_{tau,+-} / sqrt(n h^d); otherwise both
/// are beta_U +- z v_{beta,U} / sqrt(n h^d).
CiPair confidence_intervals(const TwoPointFit& fit, const VarComponents& c, double n_hd, const CiOptions& options);

/// n h^d with h^d the mean of the stage bandwidth volumes.
double effective_sample_size(Index n, const BandwidthSet& bw);

struct PointInference {
  TwoPointFit fit;
  VarComponents components;
  CiPair ci;
};

/// Estimate plus intervals at x using the estimator's own bandwidths.
PointInference infer_point(const TwoPointEstimator& estimator, const VectorRef& x, const CiOptions& options);

}  // namespace rpcova

#endif  // RPCOVA_INFERENCE_HPP
