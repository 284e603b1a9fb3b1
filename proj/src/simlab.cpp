#include "rpcova/simlab.hpp"

#include "rpcova/error.hpp"
#include "rpcova/stats.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

namespace rpcova {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::uint64_t kPilotStream = 0xFFFFFFFFFFFFFFFFULL;

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double mean_of(const VectorRef& x) { return x.mean(); }

double att_theta(const VectorRef& x) {
  const auto d = static_cast<double>(x.size());
  if (x.size() == 1) return x(0) / 2.0 + 1.5;
  return x(0) * (0.5 - 1.0 / d) + mean_of(x) / 3.0 + 2.5;
}

// Var(4 U^2) for U ~ Unif(0, 1).
constexpr double kVarFourUSq = 64.0 / 45.0;

struct Unit {
  double y0 = 0.0;
  double y1 = 0.0;
  double p = 0.5;
};

Unit draw_unit(ModelId model, const VectorXd& x, Rng& rng) {
  Unit out;
  const double x1 = x(0);
  const double xbar = x.mean();
  const double u = rng.uniform();
  switch (model) {
    case ModelId::M1Linear:
      out.p = logistic(x1 * u + x1 / 2.0 + 3.0);
      out.y0 = 4.0 - 6.0 * u + x1 + 0.5 * rng.normal();
      break;
    case ModelId::M2Quadratic:
      out.p = logistic(u + 4.0 * u * u + x1 / 2.0);
      out.y0 = 1.0 + 6.0 * u + x1 + 0.5 * rng.normal();
      break;
    case ModelId::M3CubicHetero:
      out.p = logistic(u + 4.0 * u * u + x1 / 2.0);
      out.y0 = 1.0 + 4.0 * u * std::sqrt(std::abs(x1)) + x1 + 0.5 * rng.normal();
      break;
    case ModelId::CiModel: {
      const double eps = rng.normal();
      const double eta = rng.normal();
      out.p = logistic(xbar / 2.0 + 4.0 * u - 1.5);
      out.y0 = 1.0 + 2.0 * u + 5.0 * xbar + eps * x1 / 2.0 + eta;
      break;
    }
    case ModelId::AttModel1:
      out.p = logistic(2.0 * xbar * u + 6.0 * u + 0.5 * xbar + 1.5);
      out.y0 = 4.0 + 4.0 * u * u + xbar + rng.normal();
      break;
    case ModelId::AttModel2: {
      const double eps = rng.normal();
      const double m = 4.0 + 4.0 * u * u + static_cast<double>(x.size()) * xbar + eps * xbar / 6.0;
      out.p = logistic(u + xbar / 2.0);
      out.y0 = m + 0.25 * rng.normal();
      out.y1 = m + att_theta(x) + 0.25 * rng.normal();
      return out;
    }
    case ModelId::UnconfoundedNull:
      out.p = 0.5;
      out.y0 = 1.0 + x1 + rng.normal();
      out.y1 = out.y0;
      return out;
    case ModelId::ConstantEffect:
      out.p = logistic(6.0 * u - 2.0);
      out.y0 = 4.0 + 4.0 * u * u + rng.normal();
      break;
  }
  out.y1 = out.y0 + oracle_tau(model, x);
  return out;
}

VectorXd draw_covariates(int d, Rng& rng) {
  VectorXd x(d);
  for (int j = 0; j < d; ++j) x(j) = rng.normal();
  return x;
}

// Composite Simpson weights on [a, b] with an even number of intervals.
void simpson(double a, double b, int intervals, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.resize(static_cast<std::size_t>(intervals + 1));
  weights.resize(nodes.size());
  const double step = (b - a) / intervals;
  for (int k = 0; k <= intervals; ++k) {
    nodes[static_cast<std::size_t>(k)] = a + step * k;
    const double w = (k == 0 || k == intervals) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
    weights[static_cast<std::size_t>(k)] = w * step / 3.0;
  }
}

// E(Xbar | Z = 1) when the propensity depends on (Xbar, U) only.
template <typename Propensity>
double treated_mean_xbar(int d, Propensity&& propensity) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> xs, wx, us, wu;
  simpson(-10.0 * sd, 10.0 * sd, 4000, xs, wx);
  simpson(0.0, 1.0, 400, us, wu);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double z = xs[i] / sd;
    const double phi = std::exp(-0.5 * z * z);
    double pu = 0.0;
    for (std::size_t k = 0; k < us.size(); ++k) pu += wu[k] * propensity(xs[i], us[k]);
    num += wx[i] * phi * pu * xs[i];
    den += wx[i] * phi * pu;
  }
  return num / den;
}

ordered_json to_json(const VectorXd& x) {
  ordered_json arr = ordered_json::array();
  for (Index j = 0; j < x.size(); ++j) arr.push_back(x(j));
  return arr;
}

void write_record(std::ostream* log, const ordered_json& record) {
  if (log != nullptr) *log << record.dump() << '\n';
}

ResistantMode resolved_mode(const DgpSpec& spec, const StudyOptions& options) {
  return options.resistant_mode.value_or(default_resistant_mode(spec.model));
}

EstimatorOptions resolved_estimator(const DgpSpec& spec, const StudyOptions& options) {
  EstimatorOptions est = options.estimator;
  est.resistant_mode = resolved_mode(spec, options);
  est.pi_clip = options.pi_clip.value_or(default_pi_clip(spec.model));
  return est;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

std::string_view to_string(ModelId model) {
  switch (model) {
    case ModelId::M1Linear: return "m1_linear";
    case ModelId::M2Quadratic: return "m2_quadratic";
    case ModelId::M3CubicHetero: return "m3_cubic_hetero";
    case ModelId::CiModel: return "ci_model";
    case ModelId::AttModel1: return "att_model1";
    case ModelId::AttModel2: return "att_model2";
    case ModelId::UnconfoundedNull: return "unconfounded_null";
    case ModelId::ConstantEffect: return "constant_effect";
  }
  return "unknown";
}

std::optional<ModelId> parse_model_id(std::string_view name) {
  for (ModelId m : {ModelId::M1Linear, ModelId::M2Quadratic, ModelId::M3CubicHetero, ModelId::CiModel,
                    ModelId::AttModel1, ModelId::AttModel2, ModelId::UnconfoundedNull, ModelId::ConstantEffect}) {
    if (to_string(m) == name) return m;
  }
  return std::nullopt;
}

int default_dim(ModelId model) {
  switch (model) {
    case ModelId::CiModel: return 5;
    case ModelId::AttModel1:
    case ModelId::AttModel2: return 7;
    default: return 1;
  }
}

ResistantMode default_resistant_mode(ModelId model) {
  switch (model) {
    case ModelId::M3CubicHetero:
    case ModelId::CiModel:
    case ModelId::AttModel2: return ResistantMode::Heteroscedastic;
    default: return ResistantMode::Homoscedastic;
  }
}

double default_pi_clip(ModelId model) {
  switch (model) {
    case ModelId::M1Linear:
    case ModelId::AttModel1: return 0.01;
    default: return 0.05;
  }
}

Index resistant_size(const DgpSpec& spec) {
  if (spec.resistant_size) return *spec.resistant_size;
  switch (spec.model) {
    case ModelId::CiModel:
    case ModelId::AttModel1:
    case ModelId::AttModel2:
      return static_cast<Index>(std::ceil(std::pow(static_cast<double>(spec.n), 1.1)));
    default: return spec.n;
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t rep) { return splitmix64(seed ^ rep); }

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (spare_) {
    const double v = *spare_;
    spare_.reset();
    return v;
  }
  double a, b, s;
  do {
    a = 2.0 * uniform() - 1.0;
    b = 2.0 * uniform() - 1.0;
    s = a * a + b * b;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = b * f;
  return a * f;
}

void check_dim(ModelId model, int d) {
  bool ok = d >= 1;
  switch (model) {
    case ModelId::M1Linear:
    case ModelId::M2Quadratic:
    case ModelId::M3CubicHetero: ok = d == 1; break;
    case ModelId::CiModel: ok = d >= 2 && d <= 5; break;
    default: break;
  }
  if (!ok) {
    throw Error(ErrorCode::UnsupportedDim,
                "dimension " + std::to_string(d) + " not supported by model " + std::string(to_string(model)));
  }
}

double oracle_tau(ModelId model, const VectorRef& x) {
  const double x1 = x(0);
  switch (model) {
    case ModelId::M1Linear: return x1 / 2.0 + 1.5;
    case ModelId::M2Quadratic: return x1 * x1 - 2.0 * x1 + 0.5;
    case ModelId::M3CubicHetero: return x1 * x1 * x1 / 2.0;
    case ModelId::CiModel: return 1.0 + 5.0 * (mean_of(x) + x1) / 12.0;
    case ModelId::AttModel1:
    case ModelId::AttModel2: return att_theta(x);
    case ModelId::UnconfoundedNull: return 0.0;
    case ModelId::ConstantEffect: return 2.0;
  }
  return 0.0;
}

double oracle_sigma02(ModelId model, const VectorRef& x) {
  const double x1 = x(0);
  switch (model) {
    case ModelId::M1Linear:
    case ModelId::M2Quadratic: return 3.0 + 0.25;
    case ModelId::M3CubicHetero: return 0.25 + 4.0 * std::abs(x1) / 3.0;
    case ModelId::CiModel: return 4.0 / 3.0 + x1 * x1 / 4.0;
    case ModelId::AttModel1:
    case ModelId::ConstantEffect: return kVarFourUSq + 1.0;
    case ModelId::AttModel2: {
      const double xbar = mean_of(x);
      return kVarFourUSq + xbar * xbar / 36.0 + 0.0625;
    }
    case ModelId::UnconfoundedNull: return 1.0;
  }
  return 0.0;
}

std::optional<double> oracle_att(ModelId model, int d) {
  switch (model) {
    case ModelId::CiModel: return 1.0;
    case ModelId::AttModel1:
    case ModelId::AttModel2: return d == 1 ? 1.5 : 2.5;
    case ModelId::UnconfoundedNull: return 0.0;
    case ModelId::ConstantEffect: return 2.0;
    default: return std::nullopt;
  }
}

std::optional<double> oracle_att_treated(ModelId model, int d) {
  const auto dd = static_cast<double>(d);
  switch (model) {
    case ModelId::CiModel: {
      const double e = treated_mean_xbar(d, [](double xb, double u) { return logistic(xb / 2.0 + 4.0 * u - 1.5); });
      return 1.0 + 10.0 * e / 12.0;
    }
    case ModelId::AttModel1:
    case ModelId::AttModel2: {
      const double e =
          model == ModelId::AttModel1
              ? treated_mean_xbar(d, [](double xb, double u) { return logistic(2.0 * xb * u + 6.0 * u + 0.5 * xb + 1.5); })
              : treated_mean_xbar(d, [](double xb, double u) { return logistic(u + xb / 2.0); });
      // Z depends on X through Xbar only and E(X_1 | Xbar) = Xbar.
      if (d == 1) return e / 2.0 + 1.5;
      return e * (0.5 - 1.0 / dd) + e / 3.0 + 2.5;
    }
    case ModelId::UnconfoundedNull: return 0.0;
    case ModelId::ConstantEffect: return 2.0;
    default: return std::nullopt;
  }
}

SimDraw generate(const DgpSpec& spec) {
  check_dim(spec.model, spec.d);
  if (spec.n < 2) throw Error(ErrorCode::InvalidArgument, "n must be at least 2");
  Rng rng(spec.seed);
  SimDraw draw;
  draw.model = spec.model;
  draw.d = spec.d;
  draw.att = oracle_att(spec.model, spec.d);

  Dataset& data = draw.dataset;
  data.y.resize(spec.n);
  data.z.resize(spec.n);
  data.x.resize(spec.n, spec.d);
  for (Index i = 0; i < spec.n; ++i) {
    const VectorXd x = draw_covariates(spec.d, rng);
    const Unit unit = draw_unit(spec.model, x, rng);
    const bool treated = rng.bernoulli(unit.p);
    data.x.row(i) = x.transpose();
    data.z(i) = treated ? 1.0 : 0.0;
    data.y(i) = treated ? unit.y1 : unit.y0;
  }

  const Index m = resistant_size(spec);
  draw.resistant.y.resize(m);
  draw.resistant.x.resize(m, spec.d);
  for (Index i = 0; i < m; ++i) {
    const VectorXd x = draw_covariates(spec.d, rng);
    draw.resistant.x.row(i) = x.transpose();
    draw.resistant.y(i) = draw_unit(spec.model, x, rng).y0;
  }
  return draw;
}

double linear_baseline(const Dataset& data) {
  MatrixXd design(data.n(), data.d() + 1);
  design.col(0) = data.z;
  design.rightCols(data.d()) = data.x;
  return ols_fit(design, data.y)(1);
}

std::string_view to_string(BandwidthPolicy policy) {
  switch (policy) {
    case BandwidthPolicy::PerRepCv: return "per_rep_cv";
    case BandwidthPolicy::PilotCv: return "pilot_cv";
    case BandwidthPolicy::Fixed: return "fixed";
  }
  return "unknown";
}

std::optional<BandwidthPolicy> parse_bandwidth_policy(std::string_view name) {
  for (BandwidthPolicy p : {BandwidthPolicy::PerRepCv, BandwidthPolicy::PilotCv, BandwidthPolicy::Fixed}) {
    if (to_string(p) == name) return p;
  }
  return std::nullopt;
}

BandwidthSet study_bandwidths(const DgpSpec& spec, const SimDraw& draw, const StudyOptions& options,
                              std::optional<BandwidthSet>& pilot) {
  BandwidthSelection selection;
  selection.kernel = options.estimator.kernel;
  selection.resistant_mode = resolved_mode(spec, options);
  selection.grid_size = options.grid_size;
  selection.undersmooth_gamma = options.undersmooth_gamma;
  switch (options.policy) {
    case BandwidthPolicy::Fixed:
      if (!options.fixed) throw Error(ErrorCode::InvalidArgument, "fixed bandwidth policy needs a bandwidth set");
      return *options.fixed;
    case BandwidthPolicy::PerRepCv: return select_bandwidths(draw.dataset, draw.resistant, selection);
    case BandwidthPolicy::PilotCv:
      if (!pilot) {
        DgpSpec pilot_spec = spec;
        pilot_spec.seed = substream_seed(spec.seed, kPilotStream);
        const SimDraw pilot_draw = generate(pilot_spec);
        pilot = select_bandwidths(pilot_draw.dataset, pilot_draw.resistant, selection);
      }
      return *pilot;
  }
  return *pilot;
}

std::string_view to_string(AttEstimator e) {
  switch (e) {
    case AttEstimator::AttMinus: return "att_minus";
    case AttEstimator::AttPlus: return "att_plus";
    case AttEstimator::LinearBaseline: return "linear_regression_baseline";
  }
  return "unknown";
}

std::optional<AttEstimator> parse_att_estimator(std::string_view name) {
  for (AttEstimator e : {AttEstimator::AttMinus, AttEstimator::AttPlus, AttEstimator::LinearBaseline}) {
    if (to_string(e) == name) return e;
  }
  return std::nullopt;
}

const MseRow& MseStudyResult::row(AttEstimator e) const {
  for (const MseRow& r : rows) {
    if (r.estimator == e) return r;
  }
  throw Error(ErrorCode::InvalidArgument, "estimator not part of the study");
}

MseStudyResult run_mse_study(const DgpSpec& spec, int reps, const std::vector<AttEstimator>& estimators,
                             const StudyOptions& options) {
  if (reps < 2) throw Error(ErrorCode::InvalidArgument, "an MSE study needs at least two replicates");
  if (estimators.empty()) throw Error(ErrorCode::InvalidArgument, "empty estimator set");
  const std::optional<double> oracle = oracle_att(spec.model, spec.d);
  if (!oracle) throw Error(ErrorCode::InvalidArgument, "model has no ATT oracle");

  MseStudyResult result;
  result.spec = spec;
  result.reps = reps;
  result.oracle = *oracle;
  std::vector<double> sum_sq(estimators.size(), 0.0);
  std::vector<double> sum_err(estimators.size(), 0.0);
  const EstimatorOptions est_options = resolved_estimator(spec, options);

  for (int r = 0; r < reps; ++r) {
    DgpSpec rep_spec = spec;
    rep_spec.seed = substream_seed(spec.seed, static_cast<std::uint64_t>(r));
    const SimDraw draw = generate(rep_spec);
    std::vector<double> values(estimators.size());
    try {
      const BandwidthSet bw = study_bandwidths(spec, draw, options, result.pilot);
      std::optional<AttEstimate> att;
      for (std::size_t k = 0; k < estimators.size(); ++k) {
        if (estimators[k] == AttEstimator::LinearBaseline) {
          values[k] = linear_baseline(draw.dataset);
          continue;
        }
        if (!att) att = att_two_point(TwoPointEstimator(draw.dataset, draw.resistant, bw, est_options));
        values[k] = estimators[k] == AttEstimator::AttMinus ? att->att_minus : att->att_plus;
      }
    } catch (const Error& err) {
      ++result.failed_reps;
      write_record(options.log, ordered_json{{"rep", r}, {"seed", rep_spec.seed}, {"failure", err.what()}});
      continue;
    }
    for (std::size_t k = 0; k < estimators.size(); ++k) {
      const double err = values[k] - *oracle;
      sum_sq[k] += err * err;
      sum_err[k] += err;
      write_record(options.log, ordered_json{{"rep", r},
                                             {"seed", rep_spec.seed},
                                             {"estimator", to_string(estimators[k])},
                                             {"value", values[k]},
                                             {"oracle", *oracle},
                                             {"squared_error", err * err}});
    }
  }

  const Index used = reps - result.failed_reps;
  for (std::size_t k = 0; k < estimators.size(); ++k) {
    MseRow row;
    row.estimator = estimators[k];
    row.reps_used = used;
    row.mse = used > 0 ? sum_sq[k] / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
    row.bias = used > 0 ? sum_err[k] / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
    result.rows.push_back(row);
  }
  return result;
}

std::map<std::string, double> mse_from_log(std::istream& log) {
  std::map<std::string, std::pair<double, Index>> acc;
  std::string line;
  while (std::getline(log, line)) {
    if (line.empty()) continue;
    const nlohmann::json record = nlohmann::json::parse(line);
    if (!record.contains("squared_error")) continue;
    auto& slot = acc[record.at("estimator").get<std::string>()];
    slot.first += record.at("squared_error").get<double>();
    ++slot.second;
  }
  std::map<std::string, double> out;
  for (const auto& [name, slot] : acc) out[name] = slot.first / static_cast<double>(slot.second);
  return out;
}

CoverageStudyResult run_coverage_study(const DgpSpec& spec, int reps, const std::vector<VectorXd>& grid,
                                       const CoverageOptions& coverage, const StudyOptions& options) {
  if (grid.empty()) throw Error(ErrorCode::InvalidArgument, "coverage grid is empty");
  CoverageStudyResult result;
  result.spec = spec;
  result.reps = reps;
  const EstimatorOptions est_options = resolved_estimator(spec, options);
  struct Acc {
    Index used = 0;
    Index covered_minus = 0;
    Index covered_plus = 0;
    Index interior = 0;
    double length_minus = 0.0;
    double length_plus = 0.0;
  };
  std::vector<Acc> acc(grid.size());
  const double inf = std::numeric_limits<double>::infinity();

  for (int r = 0; r < reps; ++r) {
    DgpSpec rep_spec = spec;
    rep_spec.seed = substream_seed(spec.seed, static_cast<std::uint64_t>(r));
    if (coverage.infinite_width) {
      for (std::size_t g = 0; g < grid.size(); ++g) {
        ++acc[g].used;
        ++acc[g].covered_minus;
        ++acc[g].covered_plus;
        acc[g].length_minus = inf;
        acc[g].length_plus = inf;
      }
      continue;
    }
    const SimDraw draw = generate(rep_spec);
    std::optional<TwoPointEstimator> estimator;
    try {
      const BandwidthSet bw = study_bandwidths(spec, draw, options, result.pilot);
      estimator.emplace(draw.dataset, draw.resistant, bw, est_options);
    } catch (const Error& err) {
      write_record(options.log, ordered_json{{"rep", r}, {"seed", rep_spec.seed}, {"failure", err.what()}});
      continue;
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const double tau = oracle_tau(spec.model, grid[g]);
      ordered_json record{{"rep", r}, {"seed", rep_spec.seed}, {"x", to_json(grid[g])}, {"tau", tau}};
      try {
        const PointInference inf_pt = infer_point(*estimator, grid[g], coverage.ci);
        const CiPair& ci = inf_pt.ci;
        const bool cm = ci.ci_minus.contains(tau);
        const bool cp = ci.ci_plus.contains(tau);
        Acc& a = acc[g];
        ++a.used;
        a.covered_minus += cm ? 1 : 0;
        a.covered_plus += cp ? 1 : 0;
        a.interior += ci.regime == Regime::Interior ? 1 : 0;
        a.length_minus += ci.ci_minus.length();
        a.length_plus += ci.ci_plus.length();
        record["regime"] = to_string(ci.regime);
        record["ci_minus"] = {ci.ci_minus.lower, ci.ci_minus.upper};
        record["ci_plus"] = {ci.ci_plus.lower, ci.ci_plus.upper};
        record["covered_minus"] = cm;
        record["covered_plus"] = cp;
      } catch (const Error& err) {
        record["failure"] = err.what();
      }
      write_record(options.log, record);
    }
  }

  std::vector<double> cov_minus, cov_plus;
  double total_length = 0.0;
  Index total_used = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const Acc& a = acc[g];
    CoveragePoint p;
    p.x = grid[g];
    p.tau = oracle_tau(spec.model, grid[g]);
    p.reps_used = a.used;
    if (a.used > 0) {
      const auto u = static_cast<double>(a.used);
      p.coverage_minus = static_cast<double>(a.covered_minus) / u;
      p.coverage_plus = static_cast<double>(a.covered_plus) / u;
      p.interior_fraction = static_cast<double>(a.interior) / u;
      p.mean_length_minus = coverage.infinite_width ? inf : a.length_minus / u;
      p.mean_length_plus = coverage.infinite_width ? inf : a.length_plus / u;
      cov_minus.push_back(p.coverage_minus);
      cov_plus.push_back(p.coverage_plus);
      total_length += coverage.infinite_width ? inf : a.length_minus;
      total_used += a.used;
    }
    result.points.push_back(p);
  }
  result.median_coverage_minus = median(cov_minus);
  result.median_coverage_plus = median(cov_plus);
  result.mean_length_minus =
      total_used > 0 ? total_length / static_cast<double>(total_used) : std::numeric_limits<double>::quiet_NaN();
  return result;
}

RateStudyResult run_rate_study(std::vector<Index> n_list, const std::function<double(Index)>& mse_at) {
  if (n_list.size() < 3) throw Error(ErrorCode::InvalidArgument, "a rate study needs at least three sample sizes");
  std::sort(n_list.begin(), n_list.end());
  RateStudyResult result;
  result.n_list = n_list;
  std::vector<double> log_n, log_mse;
  for (Index n : n_list) {
    const double mse = mse_at(n);
    result.mse.push_back(mse);
    log_n.push_back(std::log(static_cast<double>(n)));
    log_mse.push_back(std::log(mse));
  }
  result.slope = regression_slope(log_n, log_mse);
  return result;
}

RateStudyResult run_rate_study(const DgpSpec& base, std::vector<Index> n_list, int reps,
                               const StudyOptions& options) {
  return run_rate_study(std::move(n_list), [&](Index n) {
    DgpSpec spec = base;
    spec.n = n;
    spec.seed = substream_seed(base.seed, static_cast<std::uint64_t>(n));
    return run_mse_study(spec, reps, {AttEstimator::AttMinus}, options).row(AttEstimator::AttMinus).mse;
  });
}

RegimeStudyResult run_regime_study(const DgpSpec& spec, int reps, const VectorXd& x, const StudyOptions& options,
                                   const CiOptions& ci) {
  RegimeStudyResult result;
  result.spec = spec;
  result.reps = reps;
  if (reps <= 0) return result;
  const EstimatorOptions est_options = resolved_estimator(spec, options);
  std::optional<BandwidthSet> pilot;
  Index boundary = 0;
  Index ci_used = 0;
  Index ci_boundary = 0;
  for (int r = 0; r < reps; ++r) {
    DgpSpec rep_spec = spec;
    rep_spec.seed = substream_seed(spec.seed, static_cast<std::uint64_t>(r));
    const SimDraw draw = generate(rep_spec);
    ordered_json record{{"rep", r}, {"seed", rep_spec.seed}};
    try {
      const BandwidthSet bw = study_bandwidths(spec, draw, options, pilot);
      const TwoPointEstimator estimator(draw.dataset, draw.resistant, bw, est_options);
      const TwoPointFit fit = estimator.estimate(x);
      ++result.reps_used;
      boundary += fit.boundary ? 1 : 0;
      record["boundary"] = fit.boundary;
      record["delta2"] = fit.delta2;
      try {
        const VarComponents c = estimate_components(estimator, fit);
        const CiPair pair = confidence_intervals(fit, c, effective_sample_size(draw.dataset.n(), bw), ci);
        ++ci_used;
        ci_boundary += pair.regime == Regime::Boundary ? 1 : 0;
        record["regime"] = to_string(pair.regime);
      } catch (const Error& err) {
        record["ci_failure"] = err.what();
      }
    } catch (const Error& err) {
      record["failure"] = err.what();
    }
    write_record(options.log, record);
  }
  if (result.reps_used > 0) {
    result.boundary_fraction = static_cast<double>(boundary) / static_cast<double>(result.reps_used);
  }
  if (ci_used > 0) result.ci_boundary_fraction = static_cast<double>(ci_boundary) / static_cast<double>(ci_used);
  return result;
}

}  // namespace rpcova
