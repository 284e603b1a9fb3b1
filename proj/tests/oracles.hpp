// Independent reference computations for the test suites. Nothing here calls
// the library's solvers.
#ifndef RPCOVA_TESTS_ORACLES_HPP
#define RPCOVA_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "rpcova/simlab.hpp"

namespace oracle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double epan(double u) { return std::abs(u) < 1.0 ? 0.75 * (1.0 - u * u) : 0.0; }

inline double product_epan(const VectorXd& xi, const VectorXd& x, double h) {
  double k = 1.0;
  for (Index j = 0; j < x.size(); ++j) k *= epan((xi(j) - x(j)) / h);
  return k;
}

// Gaussian elimination with partial pivoting on a small dense system.
inline VectorXd gauss_solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  VectorXd x(static_cast<Index>(n));
  for (std::size_t r = n; r-- > 0;) {
    double s = b[r];
    for (std::size_t k = r + 1; k < n; ++k) s -= a[r][k] * x(static_cast<Index>(k));
    x(static_cast<Index>(r)) = s / a[r][r];
  }
  return x;
}

struct WlsFit {
  double intercept = 0.0;
  VectorXd slope;
  VectorXd weights;  // smoother weights on every sample point
  double objective = 0.0;
};

// Local-linear fit through the normal equations of the weighted system,
// solved densely. Unit-free offsets X_i - x.
inline WlsFit local_linear(const MatrixXd& X, const VectorXd& y, const VectorXd& mask, const VectorXd& x, double h) {
  const Index n = X.rows();
  const Index p = X.cols() + 1;
  std::vector<std::vector<double>> A(p, std::vector<double>(p, 0.0));
  std::vector<double> b(p, 0.0);
  std::vector<double> k(n, 0.0);
  for (Index i = 0; i < n; ++i) {
    k[i] = mask(i) * product_epan(X.row(i).transpose(), x, h);
    VectorXd a(p);
    a(0) = 1.0;
    a.tail(p - 1) = X.row(i).transpose() - x;
    for (Index r = 0; r < p; ++r) {
      b[r] += k[i] * a(r) * y(i);
      for (Index c = 0; c < p; ++c) A[r][c] += k[i] * a(r) * a(c);
    }
  }
  const VectorXd g = gauss_solve(A, b);
  WlsFit out;
  out.intercept = g(0);
  out.slope = g.tail(p - 1);
  // Row 0 of A^{-1} gives the smoother weights.
  std::vector<double> e0(p, 0.0);
  e0[0] = 1.0;
  const VectorXd r0 = gauss_solve(A, e0);
  out.weights = VectorXd::Zero(n);
  for (Index i = 0; i < n; ++i) {
    VectorXd a(p);
    a(0) = 1.0;
    a.tail(p - 1) = X.row(i).transpose() - x;
    out.weights(i) = k[i] * r0.dot(a);
    const double res = y(i) - g(0) - out.slope.dot(X.row(i).transpose() - x);
    out.objective += k[i] * res * res;
  }
  return out;
}

// min over zeta of sum_i K_i (y_i - mu - zeta (X_i - x))^2 for one arm, d = 1.
inline double profiled_arm(const VectorXd& X, const VectorXd& y, const std::vector<double>& k, double x, double mu) {
  double suu = 0.0, suy = 0.0;
  for (Index i = 0; i < X.size(); ++i) {
    const double u = X(i) - x;
    suu += k[i] * u * u;
    suy += k[i] * u * (y(i) - mu);
  }
  const double zeta = suu > 0.0 ? suy / suu : 0.0;
  double obj = 0.0;
  for (Index i = 0; i < X.size(); ++i) {
    const double r = y(i) - mu - zeta * (X(i) - x);
    obj += k[i] * r * r;
  }
  return obj;
}

struct TwoArm {
  VectorXd X;
  VectorXd y;
  std::vector<double> k0, k1;  // arm kernel weights (zero off-arm)
  double x = 0.0;

  TwoArm(const VectorXd& X_, const VectorXd& y_, const VectorXd& z, double x_, double h3, double h4)
      : X(X_), y(y_), k0(X_.size(), 0.0), k1(X_.size(), 0.0), x(x_) {
    for (Index i = 0; i < X.size(); ++i) {
      if (z(i) != 0.0) k1[i] = epan((X(i) - x) / h3);
      else k0[i] = epan((X(i) - x) / h4);
    }
  }
  double objective(double mu0, double mu1) const {
    return profiled_arm(X, y, k0, x, mu0) + profiled_arm(X, y, k1, x, mu1);
  }
};

// Minimises the profiled objective over mu0 on the line mu1 = mu0 + sign*r by
// a coarse grid of 400 points followed by repeated zooming.
inline double line_search(const TwoArm& t, double sign, double r, double lo, double hi) {
  double best = std::numeric_limits<double>::infinity();
  double arg = lo;
  for (int pass = 0; pass < 12; ++pass) {
    const double step = (hi - lo) / 399.0;
    for (int g = 0; g < 400; ++g) {
      const double mu0 = lo + g * step;
      const double v = t.objective(mu0, mu0 + sign * r);
      if (v < best) {
        best = v;
        arg = mu0;
      }
    }
    lo = arg - 2.0 * step;
    hi = arg + 2.0 * step;
  }
  return best;
}

// Constrained optimum of the two-arm problem by search: the unconstrained
// optimum when it is feasible, otherwise the better constraint branch.
struct GridOptimum {
  double objective = 0.0;
  bool boundary = false;
};

inline GridOptimum constrained_search(const TwoArm& t, double s_hat, double span) {
  // Unconstrained optimum by a 400 x 400 zooming grid over (mu0, mu1).
  double best = std::numeric_limits<double>::infinity();
  double a0 = 0.0, a1 = 0.0;
  double lo0 = -span, hi0 = span, lo1 = -span, hi1 = span;
  for (int pass = 0; pass < 10; ++pass) {
    const double s0 = (hi0 - lo0) / 399.0, s1 = (hi1 - lo1) / 399.0;
    std::vector<double> f1(400);
    for (int h = 0; h < 400; ++h) f1[h] = profiled_arm(t.X, t.y, t.k1, t.x, lo1 + h * s1);
    for (int g = 0; g < 400; ++g) {
      const double v0 = profiled_arm(t.X, t.y, t.k0, t.x, lo0 + g * s0);
      for (int h = 0; h < 400; ++h) {
        const double v = v0 + f1[h];
        if (v < best) {
          best = v;
          a0 = lo0 + g * s0;
          a1 = lo1 + h * s1;
        }
      }
    }
    lo0 = a0 - 2 * s0, hi0 = a0 + 2 * s0, lo1 = a1 - 2 * s1, hi1 = a1 + 2 * s1;
  }
  const double diff = a1 - a0;
  if (!(diff * diff < s_hat)) return {best, false};
  const double r = std::sqrt(s_hat);
  const double up = line_search(t, 1.0, r, -span, span);
  const double down = line_search(t, -1.0, r, -span, span);
  return {std::min(up, down), true};
}

// Leave-one-out squared error by refitting without each point.
inline std::vector<double> brute_loo(const MatrixXd& X, const VectorXd& y, double h) {
  std::vector<double> out;
  const Index n = X.rows();
  for (Index i = 0; i < n; ++i) {
    VectorXd mask = VectorXd::Ones(n);
    mask(i) = 0.0;
    const WlsFit f = local_linear(X, y, mask, X.row(i).transpose(), h);
    const double e = y(i) - f.intercept;
    out.push_back(e * e);
  }
  return out;
}

}  // namespace oracle

#endif
