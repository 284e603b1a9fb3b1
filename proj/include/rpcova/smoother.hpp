#ifndef RPCOVA_SMOOTHER_HPP
#define RPCOVA_SMOOTHER_HPP

#include "rpcova/kernel.hpp"
#include "rpcova/local_linear.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string_view>
#include <vector>

namespace rpcova {

/// Observational sample (Y_i, Z_i, X_i).
struct Dataset {
  VectorXd y;
  VectorXd z;  ///< 0/1 treatment indicator
  MatrixXd x;  ///< n x d covariates

  Index n() const { return y.size(); }
  Index d() const { return x.cols(); }
  Index n_treated() const;

  /// Throws Error(SchemaError) when shapes disagree, z is not binary, an arm
  /// is empty, n < 2(d+1) or a value is non-finite.
  void validate() const;
};

/// Sample from a population that never receives (or never responds to)
/// treatment; used only to calibrate sigma_0^2(x).
struct ResistantSample {
  VectorXd y;
  MatrixXd x;

  Index m() const { return y.size(); }
  Index d() const { return x.cols(); }

  void validate(Index expected_dim) const;
};

struct MomentEstimates {
  double m_hat = 0.0;
  double sigma2_hat = 0.0;
  double pi_hat = 0.5;
  double sigma02_hat = 0.0;
  double f_hat = 0.0;
};

/// Local-linear estimate of m(x) = E(Y | X = x).
double fit_mean(const Dataset& data, const VectorRef& x, double h1, const KernelSpec& spec);

/// Residuals e_i = Y_i - m_hat(X_i) at every sample point. Points where the
/// mean fit fails are NaN.
VectorXd mean_residuals(const LocalDesign& design, const VectorRef& y, double h1, const KernelSpec& spec);

/// Conditional variance by local-linear smoothing of squared residuals,
/// clamped at zero. The residual pass uses h1, the variance fit h2.
double fit_cond_variance(const Dataset& data, const VectorRef& x, double h1, double h2, const KernelSpec& spec);

/// Same estimate from precomputed residuals (NaN entries are skipped).
double fit_cond_variance(const LocalDesign& design, const VectorRef& residuals, const VectorRef& x, double h2,
                         const KernelSpec& spec);

/// Nadaraya-Watson average of values at x, restricted to mask.
double nw_moment(const MatrixRef& X, const VectorRef& values, const VectorRef& mask, const VectorRef& x, double h_v,
                 const KernelSpec& spec);

/// Kernel density estimate of the covariate density at x.
double kernel_density(const MatrixRef& X, const VectorRef& x, double h, const KernelSpec& spec);

/// Nadaraya-Watson regression of Z on X, clipped to [pi_clip, 1 - pi_clip].
double fit_propensity(const Dataset& data, const VectorRef& x, double h5, const KernelSpec& spec,
                      double pi_clip = 0.05);
double fit_propensity(const LocalDesign& design, const VectorRef& z, const VectorRef& x, double h5,
                      const KernelSpec& spec, double pi_clip = 0.05);

enum class ResistantMode { Heteroscedastic, Homoscedastic };

std::string_view to_string(ResistantMode mode);
std::optional<ResistantMode> parse_resistant_mode(std::string_view name);

/// sigma_0^2(x) from the resistant sample. Heteroscedastic mode runs the
/// mean/variance smoothing with (h_r1, h_r2); homoscedastic mode returns
/// the residual variance of a global linear fit and ignores x.
double fit_resistant_variance(const ResistantSample& resistant, const VectorRef& x, double h_r1, double h_r2,
                              const KernelSpec& spec, ResistantMode mode);

/// Cached resistant-variance model for repeated evaluation.
class ResistantVariance {
 public:
  ResistantVariance(const ResistantSample& resistant, double h_r1, double h_r2, const KernelSpec& spec,
                    ResistantMode mode);

  double operator()(const VectorRef& x) const;
  ResistantMode mode() const { return mode_; }
  /// Homoscedastic estimate (only meaningful in that mode).
  double constant() const { return constant_; }

 private:
  ResistantMode mode_;
  KernelSpec spec_;
  double h2_ = 1.0;
  double constant_ = 0.0;
  LocalDesign design_;
  VectorXd residuals_;
};

/// Residual variance of an OLS fit of y on [1, x], divisor m - d - 1.
double homoscedastic_residual_variance(const ResistantSample& resistant);

/// Leave-one-out prediction errors (y_i - yhat_{-i}) at every masked point;
/// NaN where point i cannot be fitted without itself.
VectorXd loo_residuals(const LocalDesign& design, const VectorRef& y, const VectorRef& mask, double h,
                       const KernelSpec& spec);

/// Mean squared LOO error over all masked points; nullopt when some point
/// cannot be fitted.
std::optional<double> loo_score(const LocalDesign& design, const VectorRef& y, const VectorRef& mask, double h,
                                const KernelSpec& spec);

/// Grid h minimising the LOO score; near-ties (relative 1e-9) go to the
/// largest h. A candidate is admissible when its LOO fit fails at no more
/// than max_failure_fraction of the masked points; admissible candidates are
/// scored on the points every one of them can predict, so with no failures
/// this is the plain LOO score. Throws Error(AllCandidatesFailed) listing the
/// bandwidths when no candidate is admissible.
double select_bandwidth_cv(const MatrixRef& X, const VectorRef& y, const VectorRef& mask, const KernelSpec& spec,
                           const std::vector<double>& grid, double max_failure_fraction = 0.05);
double select_bandwidth_cv(const LocalDesign& design, const VectorRef& y, const VectorRef& mask,
                           const KernelSpec& spec, const std::vector<double>& grid,
                           double max_failure_fraction = 0.05);

double rule_of_thumb_bandwidth(const MatrixRef& X, const VectorRef& mask);

/// `count` log-spaced bandwidths on [0.25, 4] times the rule-of-thumb value.
std::vector<double> default_bandwidth_grid(const MatrixRef& X, const VectorRef& mask, int count = 20);

/// h^gamma for h < 1 and h^(1/gamma) otherwise (gamma > 1).
double undersmooth(double h, double gamma = 1.1);

struct BandwidthSelection {
  KernelSpec kernel;
  ResistantMode resistant_mode = ResistantMode::Heteroscedastic;
  int grid_size = 20;
  /// Doublings appended above the grid while the CV minimum sits on its top.
  int max_extensions = 6;
  /// Shrink h1..h4 for inference when set.
  std::optional<double> undersmooth_gamma;
};

/// Cross-validates every stage bandwidth on the given samples.
BandwidthSet select_bandwidths(const Dataset& data, const ResistantSample& resistant,
                               const BandwidthSelection& options);

}  // namespace rpcova

#endif  // RPCOVA_SMOOTHER_HPP
