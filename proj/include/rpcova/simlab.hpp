#ifndef RPCOVA_SIMLAB_HPP
#define RPCOVA_SIMLAB_HPP

#include "rpcova/att.hpp"
#include "rpcova/identify.hpp"
#include "rpcova/inference.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace rpcova {

enum class ModelId {
  M1Linear,
  M2Quadratic,
  M3CubicHetero,
  CiModel,
  AttModel1,
  AttModel2,
  UnconfoundedNull,
  ConstantEffect,
};

std::string_view to_string(ModelId model);
std::optional<ModelId> parse_model_id(std::string_view name);
int default_dim(ModelId model);
/// Homoscedastic where sigma_0^2(x) is constant in the model.
ResistantMode default_resistant_mode(ModelId model);
/// Propensity clip that stays below 1 - max pi(x) over the bulk of the
/// covariates: 0.01 for m1_linear and att_model1 (pi reaches 0.99), else 0.05.
double default_pi_clip(ModelId model);

struct DgpSpec {
  ModelId model = ModelId::M1Linear;
  Index n = 1000;
  int d = 1;
  std::uint64_t seed = 1;
  /// Overrides the default resistant size (ceil(n^1.1) or n).
  std::optional<Index> resistant_size;
};

Index resistant_size(const DgpSpec& spec);

/// splitmix64 finaliser.
std::uint64_t splitmix64(std::uint64_t x);
/// Seed of replicate r: splitmix64(seed ^ r).
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t rep);

/// Platform-independent draws on top of mt19937_64 (the standard
/// distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal by the polar method.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// Throws Error(UnsupportedDim) when d is invalid for the model.
void check_dim(ModelId model, int d);

double oracle_tau(ModelId model, const VectorRef& x);
double oracle_sigma02(ModelId model, const VectorRef& x);
/// E tau(X) under the covariate law, the target of the sample-average
/// estimators. Null for models without an ATT target.
std::optional<double> oracle_att(ModelId model, int d);
/// E(Y(1) - Y(0) | Z = 1) by quadrature over (Xbar, U).
std::optional<double> oracle_att_treated(ModelId model, int d);

struct SimDraw {
  ModelId model = ModelId::M1Linear;
  int d = 1;
  Dataset dataset;
  ResistantSample resistant;
  std::optional<double> att;
  std::optional<double> att_treated;

  double tau(const VectorRef& x) const { return oracle_tau(model, x); }
  double sigma02(const VectorRef& x) const { return oracle_sigma02(model, x); }
};

/// Deterministic given spec.seed.
SimDraw generate(const DgpSpec& spec);

/// Coefficient of Z in the OLS fit of Y on (1, Z, X).
double linear_baseline(const Dataset& data);

enum class BandwidthPolicy {
  PerRepCv,  ///< cross-validate on every replicate
  PilotCv,   ///< cross-validate once on a pilot draw, reuse for every replicate
  Fixed,
};

std::string_view to_string(BandwidthPolicy policy);
std::optional<BandwidthPolicy> parse_bandwidth_policy(std::string_view name);

struct StudyOptions {
  EstimatorOptions estimator;
  /// Unset: the model's default_resistant_mode.
  std::optional<ResistantMode> resistant_mode;
  /// Unset: the model's default_pi_clip.
  std::optional<double> pi_clip;
  BandwidthPolicy policy = BandwidthPolicy::PilotCv;
  std::optional<BandwidthSet> fixed;
  std::optional<double> undersmooth_gamma = 1.1;
  int grid_size = 20;
  /// Per-replicate records, one JSON object per line.
  std::ostream* log = nullptr;
};

/// Bandwidths for one replicate under the study policy. pilot caches the
/// pilot selection across calls.
BandwidthSet study_bandwidths(const DgpSpec& spec, const SimDraw& draw, const StudyOptions& options,
                              std::optional<BandwidthSet>& pilot);

enum class AttEstimator { AttMinus, AttPlus, LinearBaseline };
std::string_view to_string(AttEstimator e);
std::optional<AttEstimator> parse_att_estimator(std::string_view name);

struct MseRow {
  AttEstimator estimator = AttEstimator::AttMinus;
  double mse = 0.0;
  double bias = 0.0;
  Index reps_used = 0;
};

struct MseStudyResult {
  DgpSpec spec;
  int reps = 0;
  double oracle = 0.0;
  std::vector<MseRow> rows;
  Index failed_reps = 0;
  std::optional<BandwidthSet> pilot;

  const MseRow& row(AttEstimator e) const;
};

/// Replicate r draws with seed substream_seed(spec.seed, r). Requires
/// reps >= 2. Failed replicates are logged and excluded.
MseStudyResult run_mse_study(const DgpSpec& spec, int reps, const std::vector<AttEstimator>& estimators,
                             const StudyOptions& options);

/// Per-estimator mean of squared_error over the records of a study log.
std::map<std::string, double> mse_from_log(std::istream& log);

struct CoverageOptions {
  CiOptions ci;
  /// Replace every interval by the real line (driver check).
  bool infinite_width = false;
};

struct CoveragePoint {
  VectorXd x;
  double tau = 0.0;
  Index reps_used = 0;
  double coverage_minus = 0.0;
  double coverage_plus = 0.0;
  double mean_length_minus = 0.0;
  double mean_length_plus = 0.0;
  double interior_fraction = 0.0;
};

struct CoverageStudyResult {
  DgpSpec spec;
  int reps = 0;
  std::vector<CoveragePoint> points;
  double median_coverage_minus = 0.0;
  double median_coverage_plus = 0.0;
  double mean_length_minus = 0.0;
  std::optional<BandwidthSet> pilot;
};

CoverageStudyResult run_coverage_study(const DgpSpec& spec, int reps, const std::vector<VectorXd>& grid,
                                       const CoverageOptions& coverage, const StudyOptions& options);

struct RateStudyResult {
  std::vector<Index> n_list;  ///< ascending
  std::vector<double> mse;
  double slope = 0.0;
};

/// Least-squares slope of log MSE(ATT_-) against log n. Requires at least
/// three sample sizes.
RateStudyResult run_rate_study(const DgpSpec& base, std::vector<Index> n_list, int reps,
                               const StudyOptions& options);
RateStudyResult run_rate_study(std::vector<Index> n_list, const std::function<double(Index)>& mse_at);

struct RegimeStudyResult {
  DgpSpec spec;
  int reps = 0;
  Index reps_used = 0;
  /// Fraction of replicates with Delta_hat^2 on the boundary at x.
  std::optional<double> boundary_fraction;
  /// Fraction where the interval construction chose the boundary regime.
  std::optional<double> ci_boundary_fraction;
};

RegimeStudyResult run_regime_study(const DgpSpec& spec, int reps, const VectorXd& x, const StudyOptions& options,
                                   const CiOptions& ci = {});

}  // namespace rpcova

#endif  // RPCOVA_SIMLAB_HPP
