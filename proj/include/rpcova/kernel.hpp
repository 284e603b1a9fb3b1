#ifndef RPCOVA_KERNEL_HPP
#define RPCOVA_KERNEL_HPP

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <string_view>

namespace rpcova {

/// Univariate compactly supported kernel densities on [-1, 1]. The d-variate
/// kernel is always the product K(u) = prod_j k(u_j).
enum class KernelFamily { Epanechnikov, Biweight, Triweight };

std::string_view to_string(KernelFamily family);
std::optional<KernelFamily> parse_kernel_family(std::string_view name);

struct KernelSpec {
  KernelFamily family = KernelFamily::Epanechnikov;
  double support_radius = 1.0;
};

/// Univariate kernel k(u).
template <typename Scalar>
Scalar kernel_1d(KernelFamily family, Scalar u) {
  const Scalar a = std::abs(u);
  if (a >= Scalar(1)) return Scalar(0);
  const Scalar t = Scalar(1) - u * u;
  switch (family) {
    case KernelFamily::Epanechnikov: return Scalar(0.75) * t;
    case KernelFamily::Biweight: return Scalar(15.0 / 16.0) * t * t;
    case KernelFamily::Triweight: return Scalar(35.0 / 32.0) * t * t * t;
  }
  return Scalar(0);
}

/// Product kernel K(u); zero outside the support box.
template <typename Derived>
typename Derived::Scalar kernel_eval(const KernelSpec& spec, const Eigen::MatrixBase<Derived>& u) {
  using Scalar = typename Derived::Scalar;
  Scalar value(1);
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    value *= kernel_1d(spec.family, u(j) / Scalar(spec.support_radius)) / Scalar(spec.support_radius);
    if (value == Scalar(0)) return value;
  }
  return value;
}

/// Roughness R(k) = int k(u)^2 du.
double kernel_roughness(KernelFamily family);

/// Second moment int u^2 k(u) du.
double kernel_second_moment(KernelFamily family);

/// theta_K^d = int K(u)^2 du = R(k)^d for the product kernel.
inline double kernel_theta(const KernelSpec& spec, int d) {
  return std::pow(kernel_roughness(spec.family) / spec.support_radius, d);
}

/// Scalar bandwidths, one per smoothing stage; each H_j is h_j * I_d.
struct BandwidthSet {
  double h1 = 1.0;  ///< mean fit
  double h2 = 1.0;  ///< conditional-variance fit
  double h3 = 1.0;  ///< treated-arm fit
  double h4 = 1.0;  ///< control-arm fit
  double h5 = 1.0;  ///< propensity fit
  double h_v = 1.0; ///< plug-in moment fits for the variance formulas
  double h_r1 = 1.0;  ///< resistant-sample mean fit
  double h_r2 = 1.0;  ///< resistant-sample variance fit
  /// Limit ratios alpha_j^d = |H_j| / h^d entering the variance formulas.
  double alpha2 = 1.0;
  double alpha3 = 1.0;
  double alpha4 = 1.0;
  int d = 1;

  /// Throws Error(InvalidArgument) unless every field is positive.
  void validate() const;

  /// h^d = (|H_2| + |H_3| + |H_4|) / 3.
  double volume() const {
    const double p = static_cast<double>(d);
    return (std::pow(h2, p) + std::pow(h3, p) + std::pow(h4, p)) / 3.0;
  }

  /// Bandwidth set with every stage sharing h.
  static BandwidthSet uniform(double h, int d);
};

}  // namespace rpcova

#endif  // RPCOVA_KERNEL_HPP
