#include "rpcova/inference.hpp"

#include "rpcova/error.hpp"
#include "rpcova/stats.hpp"

#include <cmath>

namespace rpcova {

namespace {

void check_inputs(const VarComponents& c) {
  if (!(c.pi_hat > 0.0 && c.pi_hat < 1.0)) throw Error(ErrorCode::InvalidPropensity, "propensity outside (0, 1)");
  if (!(c.f_hat > 0.0)) throw Error(ErrorCode::ZeroDensity, "covariate density estimate is zero");
}

double arm_term(const VarComponents& c) {
  return c.nu1_sq / (c.alpha3_d * c.pi_hat * c.f_hat) + c.nu0_sq / (c.alpha4_d * (1.0 - c.pi_hat) * c.f_hat);
}

double cross_term(const VarComponents& c) {
  return std::sqrt(c.nu0_sq) * c.eta0 / std::sqrt(c.alpha2_d * c.alpha4_d) -
         std::sqrt(c.nu1_sq) * c.eta1 / std::sqrt(c.alpha2_d * c.alpha3_d);
}

double odds_scale(const VarComponents& c) { return c.pi_hat * (1.0 - c.pi_hat); }

}  // namespace

VarComponents estimate_components(const TwoPointEstimator& estimator, const TwoPointFit& fit) {
  const Dataset& data = estimator.data();
  const BandwidthSet& bw = estimator.bandwidths();
  const KernelSpec& spec = estimator.options().kernel;
  const LocalDesign& design = estimator.design();
  const VectorXd& e = estimator.residuals();
  const VectorXd& ez = estimator.arm_residuals();
  const Index n = data.n();
  const double scale = estimator.outcome_scale();

  VarComponents c;
  c.sigma2_hat = fit.moments.sigma2_hat;
  c.pi_hat = fit.moments.pi_hat;
  c.f_hat = fit.moments.f_hat;
  c.beta_hat = fit.beta_C;
  c.theta_K_d = kernel_theta(spec, bw.d);
  c.alpha2_d = bw.alpha2;
  c.alpha3_d = bw.alpha3;
  c.alpha4_d = bw.alpha4;

  if (c.sigma2_hat < 1e-12 * scale * scale) {
    throw Error(ErrorCode::DegenerateVariance, "conditional variance estimate is numerically zero");
  }

  VectorXd mask_all(n);
  VectorXd fourth(n);
  for (Index i = 0; i < n; ++i) {
    const bool ok = std::isfinite(e(i));
    mask_all(i) = ok ? 1.0 : 0.0;
    fourth(i) = ok ? std::pow(e(i), 4) : 0.0;
  }
  const double sigma4 = c.sigma2_hat * c.sigma2_hat;
  const double sigma4_lambda2 = std::max(0.0, design.weighted_average(fourth, mask_all, fit.x, bw.h_v, spec) - sigma4);

  const double floor_sd = 1e-6 * scale;
  const double sigma_f = std::max(std::sqrt(c.sigma2_hat), floor_sd);
  c.lambda_sq = sigma4_lambda2 / std::pow(sigma_f, 4);

  for (int arm = 0; arm < 2; ++arm) {
    VectorXd mask(n);
    VectorXd sq(n);
    VectorXd prod(n);
    for (Index i = 0; i < n; ++i) {
      const bool in_arm = (data.z(i) != 0.0) == (arm == 1);
      const bool ok = in_arm && std::isfinite(e(i)) && std::isfinite(ez(i));
      mask(i) = ok ? 1.0 : 0.0;
      sq(i) = ok ? ez(i) * ez(i) : 0.0;
      prod(i) = ok ? e(i) * e(i) * ez(i) : 0.0;
    }
    double nu_sq;
    try {
      nu_sq = design.fit(sq, mask, fit.x, bw.h_v, spec).intercept;
    } catch (const Error& err) {
      if (err.code() != ErrorCode::InsufficientLocalData) throw;
      nu_sq = design.weighted_average(sq, mask, fit.x, bw.h_v, spec);
    }
    nu_sq = std::max(0.0, nu_sq);
    const double cross = design.weighted_average(prod, mask, fit.x, bw.h_v, spec);
    const double eta = cross / (sigma_f * sigma_f * std::max(std::sqrt(nu_sq), floor_sd));
    if (arm == 0) {
      c.nu0_sq = nu_sq;
      c.eta0 = eta;
    } else {
      c.nu1_sq = nu_sq;
      c.eta1 = eta;
    }
  }
  return c;
}

double v_delta_sq_raw(const VarComponents& c) {
  check_inputs(c);
  const double odds = odds_scale(c);
  const double first = 4.0 * c.theta_K_d * c.beta_hat * c.beta_hat * arm_term(c);
  const double second = 4.0 * c.theta_K_d * c.beta_hat * c.sigma2_hat / (odds * c.f_hat) * cross_term(c);
  const double third = c.theta_K_d * c.sigma2_hat * c.sigma2_hat * c.lambda_sq / (c.alpha2_d * odds * odds * c.f_hat);
  return first + second + third;
}

double v_delta_sq(const VarComponents& c) { return std::max(0.0, v_delta_sq_raw(c)); }

double v_tau_sq(const VarComponents& c, double delta2, double tau_pm) {
  check_inputs(c);
  if (!(delta2 > 0.0)) throw Error(ErrorCode::ZeroDelta, "v_tau requires a positive squared bias");
  const double odds = odds_scale(c);
  const double first = c.theta_K_d * tau_pm * tau_pm / delta2 * arm_term(c);
  const double second = c.theta_K_d * tau_pm * c.sigma2_hat / (odds * c.f_hat * delta2) * cross_term(c);
  const double third =
      c.theta_K_d * c.sigma2_hat * c.sigma2_hat * c.lambda_sq / (4.0 * c.alpha2_d * delta2 * odds * odds * c.f_hat);
  return std::max(0.0, first + second + third);
}

double v_beta_u_sq(const VarComponents& c) {
  if (!(c.f_hat > 0.0)) throw Error(ErrorCode::ZeroDensity, "covariate density estimate is zero");
  if (!(c.pi_hat > 0.0 && c.pi_hat < 1.0)) throw Error(ErrorCode::InvalidPropensity, "propensity outside (0, 1)");
  return c.theta_K_d * arm_term(c);
}

std::string_view to_string(Regime regime) { return regime == Regime::Interior ? "interior" : "boundary"; }

CiPair confidence_intervals(const TwoPointFit& fit, const VarComponents& c, double n_hd, const CiOptions& options) {
  if (!(n_hd > 1.0)) throw Error(ErrorCode::InvalidArgument, "n h^d must exceed 1");
  if (!(options.delta_exponent > 0.0 && options.delta_exponent < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "delta exponent must lie in (0, 1)");
  }
  if (!(options.alpha_level > 0.0 && options.alpha_level < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "alpha level must lie in (0, 1)");
  }

  CiPair ci;
  ci.alpha_level = options.alpha_level;
  ci.delta_exponent = options.delta_exponent;
  const double raw = v_delta_sq_raw(c);
  ci.v_delta_clamped = raw < 0.0;
  ci.v_delta = std::sqrt(std::max(0.0, raw));
  ci.threshold = ci.v_delta / std::pow(n_hd, 0.5 * (1.0 - options.delta_exponent));

  const double zq = normal_quantile(1.0 - options.alpha_level / 2.0);
  const double root_n = std::sqrt(n_hd);
  if (!ci.v_delta_clamped && fit.delta2 > ci.threshold) {
    ci.regime = Regime::Interior;
    ci.v_tau_minus = std::sqrt(v_tau_sq(c, fit.delta2, fit.tau_minus));
    ci.v_tau_plus = std::sqrt(v_tau_sq(c, fit.delta2, fit.tau_plus));
    const double hw_minus = zq * *ci.v_tau_minus / root_n;
    const double hw_plus = zq * *ci.v_tau_plus / root_n;
    ci.ci_minus = {fit.tau_minus - hw_minus, fit.tau_minus + hw_minus};
    ci.ci_plus = {fit.tau_plus - hw_plus, fit.tau_plus + hw_plus};
  } else {
    ci.regime = Regime::Boundary;
    ci.v_beta_U = std::sqrt(v_beta_u_sq(c));
    const double hw = zq * *ci.v_beta_U / root_n;
    ci.ci_minus = {fit.beta_U - hw, fit.beta_U + hw};
    ci.ci_plus = ci.ci_minus;
  }
  return ci;
}

double effective_sample_size(Index n, const BandwidthSet& bw) { return static_cast<double>(n) * bw.volume(); }

PointInference infer_point(const TwoPointEstimator& estimator, const VectorRef& x, const CiOptions& options) {
  PointInference out;
  out.fit = estimator.estimate(x);
  out.components = estimate_components(estimator, out.fit);
  out.ci = confidence_intervals(out.fit, out.components,
                                effective_sample_size(estimator.data().n(), estimator.bandwidths()), options);
  return out;
}

}  // namespace rpcova
