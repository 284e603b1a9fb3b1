#include <doctest.h>

#include "helpers.hpp"
#include "rpcova/error.hpp"
#include "rpcova/inference.hpp"
#include "rpcova/stats.hpp"

using namespace rpcova;

namespace {

VarComponents hand_components() {
  VarComponents c;
  c.nu0_sq = 1.0;
  c.nu1_sq = 1.0;
  c.lambda_sq = 2.0;
  c.eta0 = 0.0;
  c.eta1 = 0.0;
  c.f_hat = 1.0;
  c.pi_hat = 0.5;
  c.sigma2_hat = 1.0;
  c.beta_hat = 1.0;
  c.theta_K_d = 0.6;
  return c;
}

// Second implementation of the variance formulas, written from the displays.
struct Ref {
  static double arms(const VarComponents& c) {
    return c.nu1_sq / (c.alpha3_d * c.pi_hat * c.f_hat) + c.nu0_sq / (c.alpha4_d * (1 - c.pi_hat) * c.f_hat);
  }
  static double cross(const VarComponents& c) {
    return std::sqrt(c.nu0_sq) * c.eta0 / std::sqrt(c.alpha2_d * c.alpha4_d) -
           std::sqrt(c.nu1_sq) * c.eta1 / std::sqrt(c.alpha2_d * c.alpha3_d);
  }
  static double pq(const VarComponents& c) { return c.pi_hat * (1 - c.pi_hat); }
  static double v_delta(const VarComponents& c) {
    const double s2 = c.sigma2_hat;
    return 4 * c.theta_K_d * c.beta_hat * c.beta_hat * arms(c) +
           4 * c.theta_K_d * c.beta_hat * s2 / (pq(c) * c.f_hat) * cross(c) +
           c.theta_K_d * s2 * s2 * c.lambda_sq / (c.alpha2_d * pq(c) * pq(c) * c.f_hat);
  }
  static double v_tau(const VarComponents& c, double d2, double t) {
    const double s2 = c.sigma2_hat;
    return c.theta_K_d * t * t / d2 * arms(c) + c.theta_K_d * t * s2 / (pq(c) * c.f_hat * d2) * cross(c) +
           c.theta_K_d * s2 * s2 * c.lambda_sq / (4 * c.alpha2_d * d2 * pq(c) * pq(c) * c.f_hat);
  }
  static double v_beta(const VarComponents& c) { return c.theta_K_d * arms(c); }
};

VarComponents random_components(Rng& rng) {
  VarComponents c;
  c.nu0_sq = 3.0 * rng.uniform();
  c.nu1_sq = 3.0 * rng.uniform();
  c.lambda_sq = 4.0 * rng.uniform();
  c.eta0 = rng.normal();
  c.eta1 = rng.normal();
  c.f_hat = 0.05 + rng.uniform();
  c.pi_hat = 0.05 + 0.9 * rng.uniform();
  c.sigma2_hat = 0.1 + 3.0 * rng.uniform();
  c.beta_hat = 2.0 * rng.normal();
  c.theta_K_d = std::pow(0.6, 1 + static_cast<int>(4 * rng.uniform()));
  c.alpha2_d = 0.5 + rng.uniform();
  c.alpha3_d = 0.5 + rng.uniform();
  c.alpha4_d = 0.5 + rng.uniform();
  return c;
}

TwoPointFit fit_with(double beta_u, double beta_c, double delta2) {
  TwoPointFit f;
  f.beta_U = beta_u;
  f.beta_C = beta_c;
  f.delta2 = delta2;
  const double gap = std::sqrt(delta2);
  f.tau_minus = beta_c - gap;
  f.tau_plus = beta_c + gap;
  f.boundary = delta2 == 0.0;
  return f;
}

EstimatorOptions homoscedastic() {
  EstimatorOptions o;
  o.resistant_mode = ResistantMode::Homoscedastic;
  return o;
}

}  // namespace

TEST_CASE("theta_K^d by quadrature") {
  for (KernelFamily f : {KernelFamily::Epanechnikov, KernelFamily::Biweight, KernelFamily::Triweight}) {
    double r = 0.0;
    const int m = 200000;
    for (int i = 0; i < m; ++i) r += std::pow(kernel_1d(f, -1.0 + (i + 0.5) * 2.0 / m), 2) * 2.0 / m;
    for (int d = 1; d <= 4; ++d) {
      CHECK(kernel_theta(KernelSpec{f, 1.0}, d) == doctest::Approx(std::pow(r, d)).epsilon(1e-8));
    }
  }
  CHECK(kernel_theta(KernelSpec{}, 2) == doctest::Approx(0.36));
}

TEST_CASE("variance formulas: hand values") {
  VarComponents c = hand_components();
  CHECK(v_delta_sq(c) == doctest::Approx(28.8));
  CHECK(v_tau_sq(c, 1.0, 2.0) == doctest::Approx(14.4));
  CHECK(v_beta_u_sq(c) == doctest::Approx(2.4));

  // Only the trailing terms survive.
  VarComponents z = c;
  z.beta_hat = 0.0;
  CHECK(v_delta_sq(z) == doctest::Approx(0.6 * 2.0 / 0.0625));
  CHECK(v_tau_sq(c, 1.0, 0.0) == doctest::Approx(0.6 * 2.0 / (4 * 0.0625)));

  z.nu0_sq = z.nu1_sq = 0.0;
  CHECK(v_beta_u_sq(z) == 0.0);
  CHECK_THROWS_AS(v_tau_sq(c, 0.0, 1.0), Error);

  VarComponents bad = c;
  bad.pi_hat = 1.0;
  CHECK_THROWS_AS(v_delta_sq(bad), Error);
  bad = c;
  bad.f_hat = 0.0;
  CHECK_THROWS_AS(v_delta_sq(bad), Error);
  CHECK_THROWS_AS(v_beta_u_sq(bad), Error);
}

TEST_CASE("variance formulas: independent re-implementation") {
  Rng rng(71);
  for (int k = 0; k < 300; ++k) {
    const VarComponents c = random_components(rng);
    const double ref = Ref::v_delta(c);
    CHECK(v_delta_sq_raw(c) == doctest::Approx(ref).epsilon(1e-12));
    CHECK(v_delta_sq(c) == doctest::Approx(std::max(0.0, ref)).epsilon(1e-12));
    const double d2 = 0.01 + 2.0 * rng.uniform();
    const double tau = 3.0 * rng.normal();
    CHECK(v_tau_sq(c, d2, tau) == doctest::Approx(std::max(0.0, Ref::v_tau(c, d2, tau))).epsilon(1e-12));
    CHECK(v_beta_u_sq(c) == doctest::Approx(Ref::v_beta(c)).epsilon(1e-12));
    CHECK(v_delta_sq(c) >= 0.0);

    // Arm swap with pi -> 1 - pi.
    VarComponents s = c;
    std::swap(s.nu0_sq, s.nu1_sq);
    std::swap(s.alpha3_d, s.alpha4_d);
    s.pi_hat = 1.0 - c.pi_hat;
    CHECK(v_beta_u_sq(s) == doctest::Approx(v_beta_u_sq(c)).epsilon(1e-12));
  }
}

TEST_CASE("confidence_intervals regimes") {
  const VarComponents c = hand_components();
  const CiOptions opt;
  const double n_hd = 400.0;
  const double z = normal_quantile(0.975);

  SUBCASE("zero Delta is always boundary") {
    const CiPair ci = confidence_intervals(fit_with(0.3, 0.8, 0.0), c, n_hd, opt);
    CHECK(ci.regime == Regime::Boundary);
    CHECK(ci.ci_minus.lower == ci.ci_plus.lower);
    CHECK(ci.ci_minus.upper == ci.ci_plus.upper);
    CHECK(0.5 * (ci.ci_minus.lower + ci.ci_minus.upper) == doctest::Approx(0.3));
    CHECK(ci.ci_minus.length() == doctest::Approx(2 * z * std::sqrt(2.4 / n_hd)));
    CHECK(ci.v_beta_U);
    CHECK_FALSE(ci.v_tau_minus);
  }

  SUBCASE("zero v_Delta with positive Delta is interior") {
    VarComponents flat = c;
    flat.beta_hat = 0.0;
    flat.lambda_sq = 0.0;
    const CiPair ci = confidence_intervals(fit_with(1.0, 1.0, 0.04), flat, n_hd, opt);
    CHECK(ci.v_delta == 0.0);
    CHECK(ci.regime == Regime::Interior);
  }

  SUBCASE("interior intervals are centred at the two points") {
    const TwoPointFit f = fit_with(1.0, 1.0, 4.0);
    const CiPair ci = confidence_intervals(f, c, n_hd, opt);
    REQUIRE(ci.regime == Regime::Interior);
    CHECK(0.5 * (ci.ci_minus.lower + ci.ci_minus.upper) == doctest::Approx(f.tau_minus));
    CHECK(0.5 * (ci.ci_plus.lower + ci.ci_plus.upper) == doctest::Approx(f.tau_plus));
    CHECK(ci.ci_minus.length() == doctest::Approx(2 * z * std::sqrt(v_tau_sq(c, 4.0, f.tau_minus) / n_hd)));
    CHECK(ci.ci_plus.length() == doctest::Approx(2 * z * std::sqrt(v_tau_sq(c, 4.0, f.tau_plus) / n_hd)));
    CHECK(ci.threshold == doctest::Approx(std::sqrt(28.8) / std::pow(n_hd, (1 - 1.0 / 3.0) / 2)));
  }

  SUBCASE("threshold decides the regime") {
    const double thr = std::sqrt(28.8) / std::pow(n_hd, (1 - 1.0 / 3.0) / 2);
    CHECK(confidence_intervals(fit_with(1.0, 1.0, 0.99 * thr), c, n_hd, opt).regime == Regime::Boundary);
    CHECK(confidence_intervals(fit_with(1.0, 1.0, 1.01 * thr), c, n_hd, opt).regime == Regime::Interior);
  }

  SUBCASE("negative v_Delta^2 forces the boundary regime") {
    VarComponents neg = c;
    neg.eta0 = 10.0;
    neg.beta_hat = -1.0;
    REQUIRE(v_delta_sq_raw(neg) < 0.0);
    const CiPair ci = confidence_intervals(fit_with(1.0, 1.0, 4.0), neg, n_hd, opt);
    CHECK(ci.v_delta_clamped);
    CHECK(ci.regime == Regime::Boundary);
  }

  SUBCASE("larger alpha shrinks every interval") {
    for (double d2 : {0.0, 4.0}) {
      const TwoPointFit f = fit_with(1.0, 1.0, d2);
      const CiPair a = confidence_intervals(f, c, n_hd, {0.05, 1.0 / 3.0});
      const CiPair b = confidence_intervals(f, c, n_hd, {0.10, 1.0 / 3.0});
      CHECK(b.ci_minus.length() < a.ci_minus.length());
      CHECK(b.ci_plus.length() < a.ci_plus.length());
      CHECK(a.ci_minus.lower <= a.ci_minus.upper);
    }
  }

  SUBCASE("argument checks") {
    CHECK_THROWS_AS(confidence_intervals(fit_with(1, 1, 1), c, 0.5, opt), Error);
    CHECK_THROWS_AS(confidence_intervals(fit_with(1, 1, 1), c, n_hd, {1.2, 1.0 / 3.0}), Error);
    CHECK_THROWS_AS(confidence_intervals(fit_with(1, 1, 1), c, n_hd, {0.05, 1.0}), Error);
  }
}

TEST_CASE("effective sample size") {
  BandwidthSet bw = BandwidthSet::uniform(0.5, 2);
  bw.h2 = 0.4;
  bw.h3 = 0.6;
  bw.h4 = 0.8;
  CHECK(effective_sample_size(1000, bw) == doctest::Approx(1000 * (0.16 + 0.36 + 0.64) / 3));
}

TEST_CASE("estimate_components on a Gaussian unconfounded sample") {
  const SimDraw draw = generate(testing::dgp(ModelId::UnconfoundedNull, 5000, 1, 72));
  const TwoPointEstimator est(draw.dataset, draw.resistant, BandwidthSet::uniform(0.5, 1), homoscedastic());
  const TwoPointFit fit = est.estimate(VectorXd::Zero(1));
  const VarComponents c = estimate_components(est, fit);
  CHECK(std::abs(c.lambda_sq - 2.0) < 0.3);
  CHECK(std::abs(c.eta0) < 0.2);
  CHECK(std::abs(c.eta1) < 0.2);
  CHECK(c.nu0_sq == doctest::Approx(1.0).epsilon(0.15));
  CHECK(c.nu1_sq == doctest::Approx(1.0).epsilon(0.15));
  CHECK(c.theta_K_d == doctest::Approx(0.6));
  CHECK(c.f_hat == doctest::Approx(0.3989).epsilon(0.1));
}

TEST_CASE("estimate_components: arm-constant outcomes") {
  Rng rng(73);
  const Index n = 400;
  Dataset d;
  d.x = testing::normal_matrix(rng, n, 1);
  d.z = testing::bernoulli_vector(rng, n, 0.5);
  d.y = (3.0 + 2.0 * d.z.array()).matrix();
  ResistantSample r;
  r.x = testing::normal_matrix(rng, n, 1);
  r.y = testing::normal_vector(rng, n);
  const TwoPointEstimator est(d, r, BandwidthSet::uniform(0.8, 1), homoscedastic());
  const VarComponents c = estimate_components(est, est.estimate(VectorXd::Zero(1)));
  CHECK(c.nu0_sq < 1e-12);
  CHECK(c.nu1_sq < 1e-12);

  Dataset flat = d;
  flat.y.setConstant(2.0);
  const TwoPointEstimator est2(flat, r, BandwidthSet::uniform(0.8, 1), homoscedastic());
  CHECK_THROWS_AS(estimate_components(est2, est2.estimate(VectorXd::Zero(1))), Error);
}

TEST_CASE("v_Delta^2 scales with the fourth power of the outcome scale") {
  for (std::uint64_t seed : {74, 75, 76}) {
    const SimDraw draw = generate(testing::dgp(ModelId::M1Linear, 1500, 1, seed));
    const BandwidthSet bw = BandwidthSet::uniform(0.7, 1);
    const VectorXd x = VectorXd::Constant(1, 0.5);
    const TwoPointEstimator base(draw.dataset, draw.resistant, bw, homoscedastic());
    const TwoPointFit fb = base.estimate(x);
    const VarComponents cb = estimate_components(base, fb);
    const double a = 2.5;
    Dataset d = draw.dataset;
    ResistantSample r = draw.resistant;
    d.y *= a;
    r.y *= a;
    const TwoPointEstimator scaled(d, r, bw, homoscedastic());
    const TwoPointFit fs = scaled.estimate(x);
    const VarComponents cs = estimate_components(scaled, fs);
    CHECK(v_delta_sq_raw(cs) == doctest::Approx(std::pow(a, 4) * v_delta_sq_raw(cb)).epsilon(1e-8));
    CHECK(v_beta_u_sq(cs) == doctest::Approx(a * a * v_beta_u_sq(cb)).epsilon(1e-8));
    // Regime decision unchanged under rescaling.
    const double n_hd = effective_sample_size(d.n(), bw);
    CHECK(confidence_intervals(fs, cs, n_hd, {}).regime == confidence_intervals(fb, cb, n_hd, {}).regime);
  }
}

TEST_CASE("infer_point agrees with the separate steps") {
  const SimDraw draw = generate(testing::dgp(ModelId::M1Linear, 1000, 1, 77));
  const BandwidthSet bw = BandwidthSet::uniform(0.7, 1);
  const TwoPointEstimator est(draw.dataset, draw.resistant, bw, homoscedastic());
  const VectorXd x = VectorXd::Constant(1, 1.0);
  const PointInference p = infer_point(est, x, {});
  const TwoPointFit f = est.estimate(x);
  const CiPair ci = confidence_intervals(f, estimate_components(est, f), effective_sample_size(1000, bw), {});
  CHECK(p.ci.ci_minus.lower == ci.ci_minus.lower);
  CHECK(p.ci.ci_plus.upper == ci.ci_plus.upper);
  CHECK(p.ci.regime == ci.regime);
}

TEST_CASE("normal quantile") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963985).epsilon(1e-9));
  CHECK(normal_cdf(normal_quantile(0.2)) == doctest::Approx(0.2).epsilon(1e-12));
}
