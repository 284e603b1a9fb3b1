#include "rpcova/identify.hpp"

#include "rpcova/error.hpp"

#include <cmath>
#include <limits>

namespace rpcova {

double delta_squared(double beta, double sigma2, double sigma02, double pi) {
  if (!(pi > 0.0 && pi < 1.0)) throw Error(ErrorCode::InvalidPropensity, "propensity must lie in (0, 1)");
  const double value = beta * beta - (sigma2 - sigma02) / (pi * (1.0 - pi));
  return value > 0.0 ? value : 0.0;
}

namespace {

Dataset validated(Dataset data) {
  data.validate();
  return data;
}

ResistantSample validated(ResistantSample resistant, Index d) {
  resistant.validate(d);
  return resistant;
}

BandwidthSet validated(BandwidthSet bw, Index d) {
  bw.validate();
  if (bw.d != d) throw Error(ErrorCode::InvalidArgument, "bandwidth dimension does not match the data");
  return bw;
}

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const Error& err) {
    throw Error(err.code(), std::string("stage ") + name + ": " + err.what());
  }
}

double sample_sd(const VectorXd& y) {
  const double n = static_cast<double>(y.size());
  const double mean = y.mean();
  const double sd = std::sqrt((y.array() - mean).square().sum() / std::max(n - 1.0, 1.0));
  return sd > 0.0 ? sd : 1.0;
}

}  // namespace

TwoPointEstimator::TwoPointEstimator(Dataset data, ResistantSample resistant, BandwidthSet bandwidths,
                                     EstimatorOptions options)
    : data_(validated(std::move(data))),
      resistant_(validated(std::move(resistant), data_.d())),
      bw_(validated(bandwidths, data_.d())),
      options_(options),
      design_(data_.x),
      residuals_(stage("mean", [&] { return mean_residuals(design_, data_.y, bw_.h1, options_.kernel); })),
      sigma0_(stage("resistant",
                    [&] {
                      return ResistantVariance(resistant_, bw_.h_r1, bw_.h_r2, options_.kernel,
                                               options_.resistant_mode);
                    })),
      outcome_scale_(sample_sd(data_.y)) {}

TwoPointFit TwoPointEstimator::estimate(const VectorRef& x) const {
  const KernelSpec& spec = options_.kernel;
  const VectorXd all = VectorXd::Ones(data_.n());

  TwoPointFit fit;
  fit.x = x;
  MomentEstimates& mom = fit.moments;
  mom.m_hat = stage("mean", [&] { return design_.fit(data_.y, all, x, bw_.h1, spec).intercept; });
  mom.sigma2_hat = stage("variance", [&] { return fit_cond_variance(design_, residuals_, x, bw_.h2, spec); });
  mom.pi_hat = stage("propensity",
                     [&] { return fit_propensity(design_, data_.z, x, bw_.h5, spec, options_.pi_clip); });
  mom.sigma02_hat = stage("resistant", [&] { return sigma0_(x); });
  mom.f_hat = design_.density(x, bw_.h2, spec);

  fit.s_hat = (mom.sigma2_hat - mom.sigma02_hat) / (mom.pi_hat * (1.0 - mom.pi_hat));
  const GroupFit group = stage("group", [&] {
    return constrained_group_fit(design_, data_.y, data_.z, x, bw_.h3, bw_.h4, spec, fit.s_hat);
  });
  fit.beta_C = group.beta_C;
  fit.beta_U = group.beta_U;
  fit.boundary = group.boundary;
  fit.mu0_hat = group.arm0.intercept;
  fit.mu1_hat = group.arm1.intercept;
  // On the boundary beta_C^2 = s_hat, so Delta^2 vanishes exactly.
  fit.delta2 = group.boundary ? 0.0 : delta_squared(fit.beta_C, mom.sigma2_hat, mom.sigma02_hat, mom.pi_hat);
  const double gap = std::sqrt(fit.delta2);
  fit.tau_minus = fit.beta_C - gap;
  fit.tau_plus = fit.beta_C + gap;
  return fit;
}

const VectorXd& TwoPointEstimator::arm_residuals() const {
  std::call_once(arm_once_, [this] {
    const Index n = data_.n();
    const VectorXd treated = data_.z;
    const VectorXd control = (1.0 - data_.z.array()).matrix();
    arm_residuals_.resize(n);
    for (Index i = 0; i < n; ++i) {
      const bool t = data_.z(i) != 0.0;
      try {
        const LocalFit f = design_.fit(data_.y, t ? treated : control, design_.points().row(i).transpose(),
                                       t ? bw_.h3 : bw_.h4, options_.kernel);
        arm_residuals_(i) = data_.y(i) - f.intercept;
      } catch (const Error& err) {
        if (err.code() != ErrorCode::InsufficientLocalData) throw;
        arm_residuals_(i) = std::numeric_limits<double>::quiet_NaN();
      }
    }
  });
  return arm_residuals_;
}

TwoPointFit two_point_estimate(const Dataset& data, const ResistantSample& resistant, const VectorRef& x,
                               const BandwidthSet& bw, const EstimatorOptions& options) {
  return TwoPointEstimator(data, resistant, bw, options).estimate(x);
}

std::vector<GridPoint> estimate_grid(const TwoPointEstimator& estimator, const std::vector<VectorXd>& grid) {
  std::vector<GridPoint> out;
  out.reserve(grid.size());
  for (const VectorXd& x : grid) {
    GridPoint point;
    point.x = x;
    try {
      point.fit = estimator.estimate(x);
    } catch (const Error& err) {
      point.failure = err.what();
    }
    out.push_back(std::move(point));
  }
  return out;
}

}  // namespace rpcova
