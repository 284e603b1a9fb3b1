#include "rpcova/local_linear.hpp"

#include "rpcova/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace rpcova {

namespace {

constexpr double kRcondFloor = 1e-12;
constexpr double kRidgeScale = 1e-8;
constexpr double kTieTolerance = 1e-12;

// K((X_i - x) / h) with the scaled offsets written to u.
double product_kernel(const KernelSpec& spec, const MatrixRef& X, Index i, const VectorRef& x, double h,
                      double* u) {
  double value = 1.0;
  const double r = spec.support_radius;
  for (Index j = 0; j < X.cols(); ++j) {
    u[j] = (X(i, j) - x(j)) / h;
    value *= kernel_1d(spec.family, u[j] / r) / r;
    if (value == 0.0) return 0.0;
  }
  return value;
}

template <typename Visit>
void for_each_index(const std::vector<Index>* candidates, Index n, Visit&& visit) {
  if (candidates == nullptr) {
    for (Index i = 0; i < n; ++i) visit(i);
  } else {
    for (Index i : *candidates) visit(i);
  }
}

LocalFit solve_local(const MatrixRef& X, const VectorRef& y, const VectorRef& mask, const VectorRef& x, double h,
                     const KernelSpec& spec, const std::vector<Index>* candidates, bool dense_weights) {
  const Index n = X.rows();
  const Index d = X.cols();
  const Index p = d + 1;
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "bandwidth must be positive");
  if (x.size() != d) throw Error(ErrorCode::InvalidArgument, "target point has wrong dimension");

  MatrixXd A = MatrixXd::Zero(p, p);
  VectorXd b = VectorXd::Zero(p);
  std::vector<Index> support;
  std::vector<double> kernel_weights;
  std::vector<double> offsets;  // row-major k x d scaled offsets
  VectorXd a(p);
  a(0) = 1.0;

  for_each_index(candidates, n, [&](Index i) {
    const double m = mask(i);
    if (m == 0.0) return;
    const double k = product_kernel(spec, X, i, x, h, a.data() + 1);
    if (k == 0.0) return;
    const double kw = m * k;
    for (Index c = 0; c < p; ++c) {
      const double s = kw * a(c);
      for (Index r = c; r < p; ++r) A(r, c) += s * a(r);
    }
    b.noalias() += (kw * y(i)) * a;
    support.push_back(i);
    kernel_weights.push_back(kw);
    offsets.insert(offsets.end(), a.data() + 1, a.data() + p);
  });

  const Index k = static_cast<Index>(support.size());
  if (k < p) {
    throw Error(ErrorCode::InsufficientLocalData,
                std::to_string(k) + " weighted points at bandwidth " + std::to_string(h) + ", need " +
                    std::to_string(p));
  }
  A.triangularView<Eigen::StrictlyUpper>() = A.transpose();

  LocalFit fit;
  Eigen::LDLT<MatrixXd> ldlt(A);
  // rcond misses exactly zero pivots, so check D as well.
  const auto pivots = ldlt.vectorD().cwiseAbs();
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() >= kRcondFloor) ||
      !(pivots.minCoeff() > kRcondFloor * pivots.maxCoeff())) {
    A.diagonal().array() += kRidgeScale * A.trace() / static_cast<double>(p);
    ldlt.compute(A);
    fit.ridged = true;
    if (ldlt.info() != Eigen::Success) {
      throw Error(ErrorCode::InsufficientLocalData, "local design is rank deficient after ridge fallback");
    }
  }

  const VectorXd theta = ldlt.solve(b);
  const VectorXd g = ldlt.solve(VectorXd::Unit(p, 0));

  fit.intercept = theta(0);
  fit.slope = theta.tail(d) / h;
  fit.support = std::move(support);
  fit.effective_n = k;
  fit.support_weights.resize(k);
  double rss = 0.0;
  for (Index j = 0; j < k; ++j) {
    const Eigen::Map<const VectorXd> u(offsets.data() + j * d, d);
    fit.support_weights(j) = kernel_weights[j] * (g(0) + u.dot(g.tail(d)));
    const double resid = y(fit.support[j]) - theta(0) - u.dot(theta.tail(d));
    rss += kernel_weights[j] * resid * resid;
  }
  fit.objective = rss;
  fit.intercept_curvature = 1.0 / g(0);
  fit.slope_direction = g.tail(d) / (g(0) * h);

  if (dense_weights) {
    fit.weights = VectorXd::Zero(n);
    for (Index j = 0; j < k; ++j) fit.weights(fit.support[j]) = fit.support_weights(j);
  }
  return fit;
}

}  // namespace

double LocalFit::weight_of(Index i) const {
  const auto it = std::find(support.begin(), support.end(), i);
  if (it == support.end()) return 0.0;
  return support_weights(std::distance(support.begin(), it));
}

LocalDesign::LocalDesign(MatrixXd points) : points_(std::move(points)) {
  const Index n = points_.rows();
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), Index{0});
  if (points_.cols() == 0) return;
  std::stable_sort(order_.begin(), order_.end(),
                   [this](Index a, Index b) { return points_(a, 0) < points_(b, 0); });
  sorted_first_.resize(n);
  for (Index k = 0; k < n; ++k) sorted_first_[k] = points_(order_[k], 0);
}

void LocalDesign::candidates(const VectorRef& x, double radius, std::vector<Index>& out) const {
  out.clear();
  const auto lo = std::lower_bound(sorted_first_.begin(), sorted_first_.end(), x(0) - radius);
  const auto hi = std::upper_bound(lo, sorted_first_.end(), x(0) + radius);
  const auto first = std::distance(sorted_first_.begin(), lo);
  const auto last = std::distance(sorted_first_.begin(), hi);
  out.assign(order_.begin() + first, order_.begin() + last);
}

namespace {

const std::vector<Index>* select_candidates(const LocalDesign& design, const VectorRef& x, double radius,
                                            std::vector<Index>& buffer) {
  if (design.dim() == 0) return nullptr;
  design.candidates(x, radius, buffer);
  return &buffer;
}

}  // namespace

LocalFit LocalDesign::fit(const VectorRef& values, const VectorRef& mask, const VectorRef& x, double h,
                          const KernelSpec& spec, bool dense_weights) const {
  std::vector<Index> buffer;
  const auto* cand = select_candidates(*this, x, h * spec.support_radius, buffer);
  return solve_local(points_, values, mask, x, h, spec, cand, dense_weights);
}

double LocalDesign::weighted_average(const VectorRef& values, const VectorRef& mask, const VectorRef& x, double h,
                                     const KernelSpec& spec) const {
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "bandwidth must be positive");
  std::vector<Index> buffer;
  const auto* cand = select_candidates(*this, x, h * spec.support_radius, buffer);
  std::vector<double> u(static_cast<std::size_t>(dim()));
  double num = 0.0;
  double den = 0.0;
  for_each_index(cand, size(), [&](Index i) {
    if (mask(i) == 0.0) return;
    const double k = product_kernel(spec, points_, i, x, h, u.data());
    if (k == 0.0) return;
    num += mask(i) * k * values(i);
    den += mask(i) * k;
  });
  if (!(den > 0.0)) {
    throw Error(ErrorCode::EmptyNeighborhood, "no weighted points at bandwidth " + std::to_string(h));
  }
  return num / den;
}

double LocalDesign::density(const VectorRef& x, double h, const KernelSpec& spec) const {
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "bandwidth must be positive");
  std::vector<Index> buffer;
  const auto* cand = select_candidates(*this, x, h * spec.support_radius, buffer);
  std::vector<double> u(static_cast<std::size_t>(dim()));
  double sum = 0.0;
  for_each_index(cand, size(), [&](Index i) { sum += product_kernel(spec, points_, i, x, h, u.data()); });
  return sum / (static_cast<double>(size()) * std::pow(h, static_cast<double>(dim())));
}

LocalFit local_linear_fit(const MatrixRef& X, const VectorRef& y, const VectorRef& mask, const VectorRef& x,
                          double h, const KernelSpec& spec) {
  return solve_local(X, y, mask, x, h, spec, nullptr, true);
}

double group_objective(const MatrixRef& X, const VectorRef& y, const VectorRef& z, const VectorRef& x, double h3,
                       double h4, const KernelSpec& spec, double mu0, const VectorRef& zeta0, double mu1,
                       const VectorRef& zeta1) {
  std::vector<double> u(static_cast<std::size_t>(X.cols()));
  double total = 0.0;
  for (Index i = 0; i < X.rows(); ++i) {
    const bool treated = z(i) != 0.0;
    const double k = product_kernel(spec, X, i, x, treated ? h3 : h4, u.data());
    if (k == 0.0) continue;
    const VectorXd offset = X.row(i).transpose() - x;
    const double resid = treated ? y(i) - mu1 - zeta1.dot(offset) : y(i) - mu0 - zeta0.dot(offset);
    total += k * resid * resid;
  }
  return total;
}

GroupFit resolve_group_constraint(LocalFit arm0, LocalFit arm1, double s_hat) {
  GroupFit out;
  out.beta_U = arm1.intercept - arm0.intercept;
  out.mu0 = arm0.intercept;
  out.mu1 = arm1.intercept;
  out.zeta0 = arm0.slope;
  out.zeta1 = arm1.slope;
  out.objective = arm0.objective + arm1.objective;

  if (!(out.beta_U * out.beta_U < s_hat)) {
    out.beta_C = out.beta_U;
    out.boundary = false;
  } else {
    const double root = std::sqrt(s_hat);
    const double c0 = arm0.intercept_curvature;
    const double c1 = arm1.intercept_curvature;
    const double stiffness = c0 * c1 / (c0 + c1);
    const double cost_plus = (root - out.beta_U) * (root - out.beta_U) * stiffness;
    const double cost_minus = (-root - out.beta_U) * (-root - out.beta_U) * stiffness;
    double target;
    if (std::abs(cost_plus - cost_minus) <= kTieTolerance) {
      target = out.beta_U < 0.0 ? -root : root;
    } else {
      target = cost_plus < cost_minus ? root : -root;
    }
    const double shift = target - out.beta_U;
    const double shift1 = shift * c0 / (c0 + c1);
    const double shift0 = -shift * c1 / (c0 + c1);
    out.mu1 += shift1;
    out.mu0 += shift0;
    out.zeta1 += shift1 * arm1.slope_direction;
    out.zeta0 += shift0 * arm0.slope_direction;
    out.objective += shift * shift * stiffness;
    out.beta_C = target;
    out.boundary = true;
  }
  out.arm0 = std::move(arm0);
  out.arm1 = std::move(arm1);
  return out;
}

GroupFit constrained_group_fit(const LocalDesign& design, const VectorRef& y, const VectorRef& z,
                               const VectorRef& x, double h3, double h4, const KernelSpec& spec, double s_hat) {
  const VectorXd control = (1.0 - z.array()).matrix();
  LocalFit arm1 = design.fit(y, z, x, h3, spec);
  LocalFit arm0 = design.fit(y, control, x, h4, spec);
  return resolve_group_constraint(std::move(arm0), std::move(arm1), s_hat);
}

GroupFit constrained_group_fit(const MatrixRef& X, const VectorRef& y, const VectorRef& z, const VectorRef& x,
                               double h3, double h4, const KernelSpec& spec, double s_hat) {
  const VectorXd control = (1.0 - z.array()).matrix();
  LocalFit arm1 = solve_local(X, y, z, x, h3, spec, nullptr, true);
  LocalFit arm0 = solve_local(X, y, control, x, h4, spec, nullptr, true);
  return resolve_group_constraint(std::move(arm0), std::move(arm1), s_hat);
}

}  // namespace rpcova
