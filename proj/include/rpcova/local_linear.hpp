#ifndef RPCOVA_LOCAL_LINEAR_HPP
#define RPCOVA_LOCAL_LINEAR_HPP

#include "rpcova/kernel.hpp"

#include <Eigen/Dense>

#include <vector>

namespace rpcova {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

using MatrixRef = Eigen::Ref<const MatrixXd>;
using VectorRef = Eigen::Ref<const VectorXd>;

/// Result of one kernel-weighted local-linear least-squares solve at a
/// target point x:
///   min_{mu, zeta} sum_i mask_i (y_i - mu - zeta'(X_i - x))^2 K((X_i - x) / h).
///
/// The intercept is a linear smoother in y, intercept = sum_i w_i y_i, with
/// sum_i w_i = 1 and sum_i w_i (X_i - x) = 0 whenever the local design has
/// full rank.
struct LocalFit {
  double intercept = 0.0;
  VectorXd slope;
  /// Effective smoother weights w_i(x) over the whole sample (length n).
  /// Left empty by LocalDesign::fit unless dense weights are requested.
  VectorXd weights;
  /// Indices with nonzero kernel-times-mask weight, in accumulation order,
  /// and their smoother weights.
  std::vector<Index> support;
  VectorXd support_weights;
  Index effective_n = 0;
  /// True when the normal equations needed the ridge fallback.
  bool ridged = false;
  /// Weighted residual sum of squares at the optimum.
  double objective = 0.0;
  /// Objective increase per squared intercept shift when the slope is
  /// re-optimised: objective(mu) = objective + curvature * (mu - intercept)^2.
  double intercept_curvature = 0.0;
  /// Change in the slope per unit intercept shift along that profile.
  VectorXd slope_direction;

  /// Smoother weight of sample point i (zero when outside the support).
  double weight_of(Index i) const;
};

/// Covariate matrix pre-sorted on its first coordinate so kernel
/// neighbourhoods can be located by binary search. Sums run in the sorted
/// order, so results do not depend on the order of the sample rows (up to
/// ties in the first coordinate). They agree with the brute-force free
/// functions up to rounding.
class LocalDesign {
 public:
  LocalDesign() = default;
  explicit LocalDesign(MatrixXd points);

  const MatrixXd& points() const { return points_; }
  Index size() const { return points_.rows(); }
  Index dim() const { return points_.cols(); }

  /// Indices, in first-coordinate order, that may have nonzero kernel weight
  /// at x.
  void candidates(const VectorRef& x, double radius, std::vector<Index>& out) const;

  /// Throws Error(InsufficientLocalData) when fewer than d+1 points carry
  /// weight.
  LocalFit fit(const VectorRef& values, const VectorRef& mask, const VectorRef& x, double h,
               const KernelSpec& spec, bool dense_weights = false) const;

  /// Kernel-weighted average sum K_i mask_i v_i / sum K_i mask_i. Throws
  /// Error(EmptyNeighborhood) when the denominator vanishes.
  double weighted_average(const VectorRef& values, const VectorRef& mask, const VectorRef& x, double h,
                          const KernelSpec& spec) const;

  /// Kernel density estimate (n h^d)^{-1} sum_i K((X_i - x) / h).
  double density(const VectorRef& x, double h, const KernelSpec& spec) const;

 private:
  MatrixXd points_;
  std::vector<Index> order_;
  std::vector<double> sorted_first_;
};

/// Brute-force local-linear fit over every sample point.
LocalFit local_linear_fit(const MatrixRef& X, const VectorRef& y, const VectorRef& mask, const VectorRef& x,
                          double h, const KernelSpec& spec);

/// Two-arm local-linear fit of the outcome with the separation constraint
/// (mu1 - mu0)^2 >= s_hat.
struct GroupFit {
  double mu0 = 0.0;
  double mu1 = 0.0;
  VectorXd zeta0;
  VectorXd zeta1;
  double beta_C = 0.0;
  double beta_U = 0.0;
  bool boundary = false;
  /// Two-arm weighted objective at the returned solution.
  double objective = 0.0;
  /// Unconstrained arm fits.
  LocalFit arm0;
  LocalFit arm1;
};

/// Evaluates the two-arm objective at arbitrary parameters.
double group_objective(const MatrixRef& X, const VectorRef& y, const VectorRef& z, const VectorRef& x, double h3,
                       double h4, const KernelSpec& spec, double mu0, const VectorRef& zeta0, double mu1,
                       const VectorRef& zeta1);

/// Solves the constrained problem exactly. If the unconstrained difference
/// satisfies the constraint it is returned unchanged; otherwise the optimum
/// lies on mu1 - mu0 = +-sqrt(s_hat) and each branch is an
/// equality-constrained quadratic with a closed-form solution.
GroupFit constrained_group_fit(const LocalDesign& design, const VectorRef& y, const VectorRef& z,
                               const VectorRef& x, double h3, double h4, const KernelSpec& spec, double s_hat);

GroupFit constrained_group_fit(const MatrixRef& X, const VectorRef& y, const VectorRef& z, const VectorRef& x,
                               double h3, double h4, const KernelSpec& spec, double s_hat);

/// Combines two unconstrained arm fits under the separation constraint.
GroupFit resolve_group_constraint(LocalFit arm0, LocalFit arm1, double s_hat);

}  // namespace rpcova

#endif  // RPCOVA_LOCAL_LINEAR_HPP
