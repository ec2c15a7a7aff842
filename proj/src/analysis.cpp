#include "pwrd/analysis.hpp"

#include <cmath>
#include <limits>

#include "pwrd/error.hpp"

namespace pwrd {

std::string to_string(Method m) {
  switch (m) {
    case Method::pwrd: return "pwrd";
    case Method::flat: return "flat";
    case Method::mixed: return "mixed";
    case Method::exit: return "exit";
  }
  return "pwrd";
}

Method method_from_string(const std::string& s) {
  if (s == "pwrd") return Method::pwrd;
  if (s == "flat") return Method::flat;
  if (s == "mixed") return Method::mixed;
  if (s == "exit") return Method::exit;
  fail(ErrorKind::validation, "unknown method '" + s + "' (expected pwrd, flat, mixed, or exit)");
}

namespace {

AggregatedTest scalar_test(double estimate, double se, double df, double null_value,
                           Alternative alternative) {
  Eigen::VectorXd d(1), w(1), d0(1);
  Eigen::MatrixXd v(1, 1);
  d[0] = estimate;
  w[0] = 1.0;
  d0[0] = null_value;
  v(0, 0) = se * se;
  return aggregate_test(d, v, df, w, d0, alternative);
}

}  // namespace

AnalysisReport analyze(const PanelDataset& panel, Method method, const AnalysisOptions& options) {
  AnalysisReport r;
  r.method = method;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.slope = nan;
  r.relative_efficiency = nan;

  if (method == Method::mixed) {
    if (options.delta0.size() > 1) fail(ErrorKind::validation, "mixed model takes a scalar null value");
    r.mixed = fit_random_intercept(panel, options.covariates);
    r.warnings = r.mixed->warnings;
    r.test = scalar_test(r.mixed->tau_hat, r.mixed->se_cr, r.mixed->df,
                         options.delta0.size() ? options.delta0[0] : 0.0, options.alternative);
    return r;
  }
  if (method == Method::exit) {
    if (options.delta0.size() > 1) fail(ErrorKind::validation, "exit analysis takes a scalar null value");
    r.exit = exit_observation_estimate(panel, options.variant, options.effect_method, options.covariates);
    r.test = scalar_test(r.exit->estimate, r.exit->se, r.exit->df,
                         options.delta0.size() ? options.delta0[0] : 0.0, options.alternative);
    return r;
  }

  r.effects = estimate_effects(panel, options.effect_method, options.covariates);
  for (const auto& ex : r.effects->excluded) {
    r.warnings.push_back("group " + std::to_string(ex.g) + " excluded: " + ex.reason);
  }
  CovarianceOptions copts;
  copts.variant = options.variant;
  copts.residuals = options.residuals;
  copts.keep_df_kernels = options.df_rule == DfRule::satterthwaite;
  r.cov = cluster_covariance(panel, *r.effects, copts);

  if (panel.has_tested_in()) {
    r.p0 = estimate_p0(panel);
    r.p0_aligned = align_p0(*r.p0, *r.effects);
  } else if (method == Method::pwrd) {
    fail(ErrorKind::degenerate,
         "no test-in signal: panel has no tested_in flags and no threshold rule");
  }

  auto flat = flat_weights(*r.effects);
  if (method == Method::pwrd) {
    PwrdOptions popts;
    popts.ridge = options.ridge;
    r.weights = pwrd_weights(r.cov->sigma_hat, r.p0_aligned, popts);
    for (const auto& note : r.weights->notes) r.warnings.push_back(note);
  } else {
    r.weights = flat;
  }
  const Eigen::MatrixXd& sigma = r.weights->sigma ? *r.weights->sigma : r.cov->sigma_hat;
  const double df = options.df_rule == DfRule::satterthwaite
                        ? small_sample_df(*r.cov, r.weights->omega)
                        : r.cov->df;
  r.test = aggregate_test(r.effects->delta_hat, sigma, df, r.weights->omega, options.delta0,
                          options.alternative);
  if (r.p0_aligned.size() && (r.p0_aligned.array() > 0).any()) {
    r.slope = test_slope(r.weights->omega, r.p0_aligned, sigma);
    if (method == Method::pwrd) {
      r.relative_efficiency = pitman_relative_efficiency(r.weights->omega, flat.omega, r.p0_aligned, sigma);
    }
  }
  return r;
}

}  // namespace pwrd
