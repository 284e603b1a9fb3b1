#include "rpcova/smoother.hpp"

#include "rpcova/error.hpp"
#include "rpcova/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

namespace rpcova {

namespace {

VectorXd ones(Index n) { return VectorXd::Ones(n); }

// Squared residuals with failed points masked out.
void squared_residuals(const VectorRef& residuals, VectorXd& values, VectorXd& mask) {
  const Index n = residuals.size();
  values.resize(n);
  mask.resize(n);
  for (Index i = 0; i < n; ++i) {
    const bool ok = std::isfinite(residuals(i));
    values(i) = ok ? residuals(i) * residuals(i) : 0.0;
    mask(i) = ok ? 1.0 : 0.0;
  }
}

bool all_finite(const MatrixRef& m) { return m.allFinite(); }

// Neumaier-compensated running sum.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double v) {
    const double t = sum + v;
    carry += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + carry; }
};

}  // namespace

Index Dataset::n_treated() const { return static_cast<Index>((z.array() != 0.0).count()); }

void Dataset::validate() const {
  const Index n = y.size();
  if (z.size() != n || x.rows() != n) throw Error(ErrorCode::SchemaError, "y, z and x row counts differ");
  if (x.cols() < 1) throw Error(ErrorCode::SchemaError, "at least one covariate column is required");
  for (Index i = 0; i < n; ++i) {
    if (z(i) != 0.0 && z(i) != 1.0) {
      throw Error(ErrorCode::SchemaError, "z must be 0 or 1 (row " + std::to_string(i + 1) + ")");
    }
  }
  if (!all_finite(x) || !y.allFinite()) throw Error(ErrorCode::SchemaError, "non-finite value in study data");
  if (n < 2 * (x.cols() + 1)) throw Error(ErrorCode::SchemaError, "need at least 2(d+1) observations");
  const Index nt = n_treated();
  if (nt == 0 || nt == n) throw Error(ErrorCode::SchemaError, "both treatment arms must be nonempty");
}

void ResistantSample::validate(Index expected_dim) const {
  if (x.rows() != y.size()) throw Error(ErrorCode::SchemaError, "resistant y and x row counts differ");
  if (x.cols() != expected_dim) {
    throw Error(ErrorCode::SchemaError, "resistant covariate dimension " + std::to_string(x.cols()) +
                                            " differs from study dimension " + std::to_string(expected_dim));
  }
  if (y.size() < expected_dim + 1) throw Error(ErrorCode::SchemaError, "resistant sample needs at least d+1 rows");
  if (!all_finite(x) || !y.allFinite()) throw Error(ErrorCode::SchemaError, "non-finite value in resistant data");
}

double fit_mean(const Dataset& data, const VectorRef& x, double h1, const KernelSpec& spec) {
  return local_linear_fit(data.x, data.y, ones(data.n()), x, h1, spec).intercept;
}

VectorXd mean_residuals(const LocalDesign& design, const VectorRef& y, double h1, const KernelSpec& spec) {
  const Index n = design.size();
  const VectorXd mask = ones(n);
  VectorXd e(n);
  for (Index i = 0; i < n; ++i) {
    try {
      e(i) = y(i) - design.fit(y, mask, design.points().row(i).transpose(), h1, spec).intercept;
    } catch (const Error& err) {
      if (err.code() != ErrorCode::InsufficientLocalData) throw;
      e(i) = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return e;
}

double fit_cond_variance(const LocalDesign& design, const VectorRef& residuals, const VectorRef& x, double h2,
                         const KernelSpec& spec) {
  VectorXd values;
  VectorXd mask;
  squared_residuals(residuals, values, mask);
  return std::max(0.0, design.fit(values, mask, x, h2, spec).intercept);
}

double fit_cond_variance(const Dataset& data, const VectorRef& x, double h1, double h2, const KernelSpec& spec) {
  const LocalDesign design(data.x);
  const VectorXd e = mean_residuals(design, data.y, h1, spec);
  return fit_cond_variance(design, e, x, h2, spec);
}

double nw_moment(const MatrixRef& X, const VectorRef& values, const VectorRef& mask, const VectorRef& x, double h_v,
                 const KernelSpec& spec) {
  return LocalDesign(X).weighted_average(values, mask, x, h_v, spec);
}

double kernel_density(const MatrixRef& X, const VectorRef& x, double h, const KernelSpec& spec) {
  return LocalDesign(X).density(x, h, spec);
}

double fit_propensity(const LocalDesign& design, const VectorRef& z, const VectorRef& x, double h5,
                      const KernelSpec& spec, double pi_clip) {
  const double raw = design.weighted_average(z, ones(z.size()), x, h5, spec);
  return std::clamp(raw, pi_clip, 1.0 - pi_clip);
}

double fit_propensity(const Dataset& data, const VectorRef& x, double h5, const KernelSpec& spec, double pi_clip) {
  return fit_propensity(LocalDesign(data.x), data.z, x, h5, spec, pi_clip);
}

std::string_view to_string(ResistantMode mode) {
  return mode == ResistantMode::Homoscedastic ? "homoscedastic" : "heteroscedastic";
}

std::optional<ResistantMode> parse_resistant_mode(std::string_view name) {
  if (name == "homoscedastic") return ResistantMode::Homoscedastic;
  if (name == "heteroscedastic") return ResistantMode::Heteroscedastic;
  return std::nullopt;
}

double homoscedastic_residual_variance(const ResistantSample& resistant) {
  const VectorXd coef = ols_fit(resistant.x, resistant.y);
  const VectorXd fitted = (resistant.x * coef.tail(resistant.d())).array() + coef(0);
  const double dof = static_cast<double>(resistant.m() - resistant.d() - 1);
  if (!(dof > 0.0)) throw Error(ErrorCode::InsufficientLocalData, "resistant sample too small for a linear fit");
  return (resistant.y - fitted).squaredNorm() / dof;
}

ResistantVariance::ResistantVariance(const ResistantSample& resistant, double h_r1, double h_r2,
                                     const KernelSpec& spec, ResistantMode mode)
    : mode_(mode), spec_(spec), h2_(h_r2) {
  if (mode_ == ResistantMode::Homoscedastic) {
    constant_ = homoscedastic_residual_variance(resistant);
  } else {
    design_ = LocalDesign(resistant.x);
    residuals_ = mean_residuals(design_, resistant.y, h_r1, spec);
  }
}

double ResistantVariance::operator()(const VectorRef& x) const {
  if (mode_ == ResistantMode::Homoscedastic) return constant_;
  return fit_cond_variance(design_, residuals_, x, h2_, spec_);
}

double fit_resistant_variance(const ResistantSample& resistant, const VectorRef& x, double h_r1, double h_r2,
                              const KernelSpec& spec, ResistantMode mode) {
  return ResistantVariance(resistant, h_r1, h_r2, spec, mode)(x);
}

VectorXd loo_residuals(const LocalDesign& design, const VectorRef& y, const VectorRef& mask, double h,
                       const KernelSpec& spec) {
  const Index n = design.size();
  const Index p = design.dim() + 1;
  VectorXd out = VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
  for (Index i = 0; i < n; ++i) {
    if (mask(i) == 0.0) continue;
    LocalFit fit;
    try {
      fit = design.fit(y, mask, design.points().row(i).transpose(), h, spec);
    } catch (const Error& err) {
      if (err.code() != ErrorCode::InsufficientLocalData) throw;
      continue;
    }
    if (fit.effective_n - 1 < p) continue;
    // Deleting point i from a weighted least-squares fit evaluated at its own
    // covariate changes the prediction by its leverage.
    const double denom = 1.0 - fit.weight_of(i);
    if (!(denom > 1e-10)) continue;
    out(i) = (y(i) - fit.intercept) / denom;
  }
  return out;
}

std::optional<double> loo_score(const LocalDesign& design, const VectorRef& y, const VectorRef& mask, double h,
                                const KernelSpec& spec) {
  const VectorXd r = loo_residuals(design, y, mask, h, spec);
  CompensatedSum total;
  Index count = 0;
  for (Index i = 0; i < r.size(); ++i) {
    if (mask(i) == 0.0) continue;
    if (std::isnan(r(i))) return std::nullopt;
    total.add(r(i) * r(i));
    ++count;
  }
  if (count == 0) return std::nullopt;
  return total.value() / static_cast<double>(count);
}

double select_bandwidth_cv(const LocalDesign& design, const VectorRef& y, const VectorRef& mask,
                           const KernelSpec& spec, const std::vector<double>& grid, double max_failure_fraction) {
  if (grid.empty()) throw Error(ErrorCode::InvalidArgument, "bandwidth grid is empty");
  const Index n = design.size();
  const double masked = mask.sum();
  std::vector<VectorXd> residuals;
  std::vector<bool> admissible(grid.size(), false);
  residuals.reserve(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    residuals.push_back(loo_residuals(design, y, mask, grid[k], spec));
    Index failed = 0;
    for (Index i = 0; i < n; ++i) failed += (mask(i) != 0.0 && std::isnan(residuals[k](i))) ? 1 : 0;
    admissible[k] = masked > 0.0 && static_cast<double>(failed) <= max_failure_fraction * masked;
  }

  // Score every admissible h on the points that all of them can predict.
  std::vector<Index> common;
  for (Index i = 0; i < n; ++i) {
    if (mask(i) == 0.0) continue;
    bool ok = true;
    for (std::size_t k = 0; k < grid.size() && ok; ++k) ok = !admissible[k] || !std::isnan(residuals[k](i));
    if (ok) common.push_back(i);
  }
  std::vector<std::optional<double>> scores(grid.size());
  if (!common.empty()) {
    for (std::size_t k = 0; k < grid.size(); ++k) {
      if (!admissible[k]) continue;
      CompensatedSum total;
      for (Index i : common) total.add(residuals[k](i) * residuals[k](i));
      scores[k] = total.value() / static_cast<double>(common.size());
    }
  }

  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : scores) {
    if (s) best = std::min(best, *s);
  }
  if (!std::isfinite(best)) {
    std::ostringstream msg;
    msg << "every bandwidth failed:";
    for (double h : grid) msg << ' ' << h;
    throw Error(ErrorCode::AllCandidatesFailed, msg.str());
  }

  // Scale for the absolute part of the tie tolerance.
  CompensatedSum sum;
  CompensatedSum sum_sq;
  double count = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    if (mask(i) == 0.0) continue;
    sum.add(y(i));
    sum_sq.add(y(i) * y(i));
    count += 1.0;
  }
  const double mean = sum.value() / count;
  const double spread = std::max(sum_sq.value() / count - mean * mean, 0.0);
  const double tolerance = 1e-9 * best + 1e-12 * (spread > 0.0 ? spread : 1.0);

  double chosen = 0.0;
  bool found = false;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (!scores[k] || *scores[k] - best > tolerance) continue;
    if (!found || grid[k] > chosen) {
      chosen = grid[k];
      found = true;
    }
  }
  return chosen;
}

double select_bandwidth_cv(const MatrixRef& X, const VectorRef& y, const VectorRef& mask, const KernelSpec& spec,
                           const std::vector<double>& grid, double max_failure_fraction) {
  return select_bandwidth_cv(LocalDesign(X), y, mask, spec, grid, max_failure_fraction);
}

double rule_of_thumb_bandwidth(const MatrixRef& X, const VectorRef& mask) {
  const Index d = X.cols();
  double log_sum = 0.0;
  double count = mask.sum();
  if (!(count > 1.0)) throw Error(ErrorCode::InvalidArgument, "need at least two points for a bandwidth");
  for (Index j = 0; j < d; ++j) {
    double mean = 0.0;
    for (Index i = 0; i < X.rows(); ++i) mean += mask(i) * X(i, j);
    mean /= count;
    double ss = 0.0;
    for (Index i = 0; i < X.rows(); ++i) ss += mask(i) * (X(i, j) - mean) * (X(i, j) - mean);
    const double sd = std::sqrt(ss / (count - 1.0));
    log_sum += std::log(sd > 0.0 ? sd : 1.0);
  }
  const double sd_geo = std::exp(log_sum / static_cast<double>(d));
  return sd_geo * std::pow(count, -1.0 / static_cast<double>(d + 4));
}

std::vector<double> default_bandwidth_grid(const MatrixRef& X, const VectorRef& mask, int count) {
  const double anchor = rule_of_thumb_bandwidth(X, mask);
  std::vector<double> grid(static_cast<std::size_t>(count));
  const double lo = std::log(0.25 * anchor);
  const double hi = std::log(4.0 * anchor);
  for (int k = 0; k < count; ++k) {
    const double t = count == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(count - 1);
    grid[static_cast<std::size_t>(k)] = std::exp(lo + t * (hi - lo));
  }
  return grid;
}

double undersmooth(double h, double gamma) {
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "bandwidth must be positive");
  if (!(gamma > 1.0)) throw Error(ErrorCode::InvalidArgument, "undersmoothing exponent must exceed 1");
  return h < 1.0 ? std::pow(h, gamma) : std::pow(h, 1.0 / gamma);
}

BandwidthSet select_bandwidths(const Dataset& data, const ResistantSample& resistant,
                               const BandwidthSelection& options) {
  const KernelSpec& spec = options.kernel;
  const LocalDesign design(data.x);
  const VectorXd all = ones(data.n());
  const VectorXd control = (1.0 - data.z.array()).matrix();

  auto cv = [&](const LocalDesign& des, const VectorRef& values, const VectorRef& mask) {
    std::vector<double> grid = default_bandwidth_grid(des.points(), mask, options.grid_size);
    double h = select_bandwidth_cv(des, values, mask, spec, grid);
    // A minimum at the top of the grid means the grid is too narrow, which
    // is routine for near-linear regressions in several dimensions.
    for (int k = 0; k < options.max_extensions && h == grid.back(); ++k) {
      grid.push_back(2.0 * grid.back());
      h = select_bandwidth_cv(des, values, mask, spec, grid);
    }
    return h;
  };

  BandwidthSet bw;
  bw.d = static_cast<int>(data.d());
  bw.h1 = cv(design, data.y, all);
  {
    VectorXd values;
    VectorXd mask;
    squared_residuals(mean_residuals(design, data.y, bw.h1, spec), values, mask);
    bw.h2 = cv(design, values, mask);
  }
  bw.h3 = cv(design, data.y, data.z);
  bw.h4 = cv(design, data.y, control);
  bw.h5 = cv(design, data.z, all);
  bw.h_v = bw.h2;

  if (options.resistant_mode == ResistantMode::Heteroscedastic) {
    const LocalDesign rdesign(resistant.x);
    const VectorXd rall = ones(resistant.m());
    bw.h_r1 = cv(rdesign, resistant.y, rall);
    VectorXd values;
    VectorXd mask;
    squared_residuals(mean_residuals(rdesign, resistant.y, bw.h_r1, spec), values, mask);
    bw.h_r2 = cv(rdesign, values, mask);
  } else {
    bw.h_r1 = bw.h1;
    bw.h_r2 = bw.h2;
  }

  if (options.undersmooth_gamma) {
    const double g = *options.undersmooth_gamma;
    bw.h1 = undersmooth(bw.h1, g);
    bw.h2 = undersmooth(bw.h2, g);
    bw.h3 = undersmooth(bw.h3, g);
    bw.h4 = undersmooth(bw.h4, g);
  }
  return bw;
}

}  // namespace rpcova
