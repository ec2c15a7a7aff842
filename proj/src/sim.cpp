#include "pwrd/sim.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <random>
#include <thread>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "pwrd/csv.hpp"
#include "pwrd/error.hpp"
#include "pwrd/numeric.hpp"

namespace pwrd {

std::string to_string(Regime r) {
  switch (r) {
    case Regime::null: return "null";
    case Regime::effect1: return "effect1";
    case Regime::effect2: return "effect2";
    case Regime::effect3: return "effect3";
  }
  return "null";
}

Regime regime_from_string(const std::string& s) {
  if (s == "null") return Regime::null;
  if (s == "effect1") return Regime::effect1;
  if (s == "effect2") return Regime::effect2;
  if (s == "effect3") return Regime::effect3;
  fail(ErrorKind::validation, "unknown effect regime '" + s + "'");
}

void EffectSpec::validate() const {
  if (!std::isfinite(tau) || tau < 0) fail(ErrorKind::validation, "effect size must be finite and >= 0");
  if (regime == Regime::effect2 && !(p >= 0 && p <= 1)) {
    fail(ErrorKind::validation, "spill fraction p must lie in [0, 1]");
  }
}

EffectSpec EffectSpec::from_json(const nlohmann::json& j) {
  EffectSpec e;
  try {
    e.regime = regime_from_string(j.value("regime", std::string("null")));
    if (j.contains("tau")) e.tau = j.at("tau").get<double>();
    if (j.contains("l")) e.tau = j.at("l").get<double>();
    e.p = j.value("p", 0.0);
    e.sd_reading = j.value("sd_reading", false);
    e.defer = j.value("defer", false);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::validation, std::string("invalid effect specification: ") + ex.what());
  }
  e.validate();
  return e;
}

nlohmann::json EffectSpec::to_json() const {
  nlohmann::json j = {{"regime", to_string(regime)}, {"tau", tau}};
  if (regime == Regime::effect2) j["p"] = p;
  if (regime == Regime::effect3) j["sd_reading"] = sd_reading;
  if (regime == Regime::effect1 || regime == Regime::effect2) j["defer"] = defer;
  return j;
}

// ---------------------------------------------------------------------------
// Scenario

double Scenario::icc() const {
  const double tv = total_variance();
  return tv > 0 ? sigma2_mu / tv : 0.0;
}

Scenario Scenario::with_icc(double icc) const {
  if (!(icc >= 0 && icc < 1)) fail(ErrorKind::validation, "ICC must lie in [0, 1)");
  Scenario s = *this;
  const double tv = total_variance();
  s.sigma2_mu = icc * tv;
  s.sigma2_eps = (1.0 - icc) * tv;
  if (!s.calibration_targets.empty()) {
    s.thresholds = calibrate_thresholds(s, s.calibration_targets).thresholds;
  }
  return s;
}

namespace {

// Participation years observed for a unit entering at `grade` in `entry_year`.
int span_years(const Scenario& s, int entry_year, int grade) {
  return std::max(0, std::min(s.n_years - entry_year + 1, s.max_grade - grade + 1));
}

double threshold_for(const Scenario& s, int grade) {
  auto it = s.thresholds.find(grade);
  if (it == s.thresholds.end()) {
    fail(ErrorKind::validation, "scenario has no test-in threshold for grade " + std::to_string(grade));
  }
  return it->second;
}

double number_or_string(const nlohmann::json& v, const std::string& what) {
  if (v.is_string()) return parse_double(v.get<std::string>(), what);
  return v.get<double>();
}

}  // namespace

void Scenario::validate() const {
  if (n_clusters < 4) fail(ErrorKind::validation, "scenario needs at least 4 clusters");
  if (n_years < 1) fail(ErrorKind::validation, "scenario needs at least one study year");
  if (!(sigma2_eps >= 0) || !(sigma2_mu >= 0) || !std::isfinite(sigma2_eps) ||
      !std::isfinite(sigma2_mu)) {
    fail(ErrorKind::validation, "variance components must be finite and >= 0");
  }
  if (!std::isfinite(beta0) || !std::isfinite(beta1) || !std::isfinite(gamma0)) {
    fail(ErrorKind::validation, "fixed effects must be finite");
  }
  if (cohorts.empty()) fail(ErrorKind::validation, "scenario has no cohorts");
  for (const auto& c : cohorts) {
    if (c.entry_year < 1 || c.entry_year > n_years) {
      fail(ErrorKind::validation, "cohort " + std::to_string(c.cohort) + " enters outside the study");
    }
    for (auto [grade, units] : c.units_per_cluster) {
      if (units < 1) fail(ErrorKind::validation, "units per cluster must be >= 1");
      if (grade > max_grade) fail(ErrorKind::validation, "entry grade above the maximum grade");
      for (int k = 0; k < span_years(*this, c.entry_year, grade); ++k) {
        const double t = threshold_for(*this, grade + k);
        if (std::isnan(t)) fail(ErrorKind::validation, "test-in threshold is NaN");
      }
    }
  }
  effect.validate();
}

Scenario Scenario::from_json(const nlohmann::json& j) {
  Scenario s;
  try {
    s.name = j.value("name", std::string("custom"));
    s.n_clusters = j.value("n_clusters", s.n_clusters);
    s.n_years = j.value("n_years", s.n_years);
    s.max_grade = j.value("max_grade", s.max_grade);
    s.beta0 = j.value("beta0", s.beta0);
    s.beta1 = j.value("beta1", s.beta1);
    s.gamma0 = j.value("gamma0", s.gamma0);
    if (j.contains("sigma2_eps") || j.contains("sigma2_mu")) {
      s.sigma2_eps = j.at("sigma2_eps").get<double>();
      s.sigma2_mu = j.at("sigma2_mu").get<double>();
    } else if (j.contains("icc") || j.contains("total_variance")) {
      const double tv = j.value("total_variance", 225.0);
      const double icc = j.value("icc", 0.15);
      s.sigma2_mu = icc * tv;
      s.sigma2_eps = (1.0 - icc) * tv;
    }
    s.cohorts.clear();
    for (const auto& c : j.at("cohorts")) {
      CohortSpec spec;
      spec.cohort = c.at("cohort").get<int>();
      spec.entry_year = c.value("entry_year", 1);
      for (auto& [grade, units] : c.at("units_per_cluster").items()) {
        spec.units_per_cluster[static_cast<int>(parse_int(grade, "entry grade"))] = units.get<int>();
      }
      s.cohorts.push_back(std::move(spec));
    }
    if (j.contains("calibrate_to")) {
      s.calibration_targets = j.at("calibrate_to").get<std::vector<double>>();
    }
    if (j.contains("test_in_thresholds")) {
      for (auto& [grade, value] : j.at("test_in_thresholds").items()) {
        s.thresholds[static_cast<int>(parse_int(grade, "threshold grade"))] =
            number_or_string(value, "test-in threshold");
      }
    }
    if (j.contains("effect")) s.effect = EffectSpec::from_json(j.at("effect"));
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::validation, std::string("invalid scenario: ") + ex.what());
  }
  if (s.thresholds.empty() && !s.calibration_targets.empty()) {
    s.thresholds = calibrate_thresholds(s, s.calibration_targets).thresholds;
  }
  s.validate();
  return s;
}

nlohmann::json Scenario::to_json() const {
  nlohmann::json cohorts_json = nlohmann::json::array();
  for (const auto& c : cohorts) {
    nlohmann::json units = nlohmann::json::object();
    for (auto [g, n] : c.units_per_cluster) units[std::to_string(g)] = n;
    cohorts_json.push_back({{"cohort", c.cohort}, {"entry_year", c.entry_year}, {"units_per_cluster", units}});
  }
  nlohmann::json thr = nlohmann::json::object();
  for (auto [g, t] : thresholds) {
    thr[std::to_string(g)] = std::isfinite(t) ? nlohmann::json(t) : nlohmann::json(format_double(t));
  }
  nlohmann::json j = {{"name", name},
                      {"n_clusters", n_clusters},
                      {"n_years", n_years},
                      {"max_grade", max_grade},
                      {"cohorts", cohorts_json},
                      {"beta0", beta0},
                      {"beta1", beta1},
                      {"gamma0", gamma0},
                      {"sigma2_eps", sigma2_eps},
                      {"sigma2_mu", sigma2_mu},
                      {"test_in_thresholds", thr},
                      {"effect", effect.to_json()},
                      {"seed", seed}};
  if (!calibration_targets.empty()) j["calibrate_to"] = calibration_targets;
  return j;
}

std::vector<double> default_test_in_targets() { return {0.383, 0.543, 0.611, 0.694}; }

Scenario Scenario::default_layout() {
  Scenario s;
  s.name = "default_layout";
  s.cohorts = {
      {1, 1, {{0, 16}, {1, 8}, {2, 8}, {3, 8}}},
      {2, 2, {{0, 16}}},
      {3, 3, {{0, 16}}},
      {4, 4, {{0, 16}}},
  };
  s.calibration_targets = default_test_in_targets();
  s.thresholds = calibrate_thresholds(s, s.calibration_targets).thresholds;
  s.effect = EffectSpec{Regime::effect1, 3.0, 0.0, false, false};
  return s;
}

Scenario Scenario::single_cohort(int n_clusters, int units_per_cluster) {
  Scenario s;
  s.name = "single_cohort";
  s.n_clusters = n_clusters;
  s.cohorts = {{1, 1, {{0, units_per_cluster}}}};
  s.calibration_targets = default_test_in_targets();
  s.thresholds = calibrate_thresholds(s, s.calibration_targets).thresholds;
  s.effect = EffectSpec{};
  return s;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t replicate, Stage stage) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replicate), static_cast<std::uint32_t>(replicate >> 32),
                    static_cast<std::uint32_t>(stage)};
  return std::mt19937_64(seq);
}

}  // namespace

PanelDataset generate_panel(const Scenario& s, std::uint64_t replicate) {
  const int C = s.n_clusters;
  std::vector<int> treat(C, 0);
  {
    auto rng = stream(s.seed, replicate, Stage::assignment);
    std::bernoulli_distribution coin(0.5);
    for (int b = 0; 2 * b + 1 < C; ++b) treat[2 * b + (coin(rng) ? 1 : 0)] = 1;
    if (C % 2 == 1) treat[C - 1] = coin(rng) ? 1 : 0;
  }
  std::vector<double> mu(C);
  {
    auto rng = stream(s.seed, replicate, Stage::cluster);
    std::normal_distribution<double> z;
    const double sd = std::sqrt(s.sigma2_mu);
    for (int c = 0; c < C; ++c) mu[c] = s.gamma0 + sd * z(rng);
  }
  auto rng = stream(s.seed, replicate, Stage::residual);
  std::normal_distribution<double> z;
  const double sd = std::sqrt(s.sigma2_eps);

  std::vector<Observation> obs;
  int unit = 0;
  for (const auto& cohort : s.cohorts) {
    for (auto [entry_grade, units] : cohort.units_per_cluster) {
      const int years = span_years(s, cohort.entry_year, entry_grade);
      std::vector<double> cut(years);
      for (int k = 0; k < years; ++k) cut[k] = threshold_for(s, entry_grade + k);
      for (int c = 0; c < C; ++c) {
        for (int j = 0; j < units; ++j, ++unit) {
          bool flagged = false;
          for (int k = 0; k < years; ++k) {
            Observation o;
            o.unit = unit;
            o.cluster = c;
            o.block = c / 2;
            o.treatment = treat[c];
            o.cohort = cohort.cohort;
            o.grade = entry_grade + k;
            o.year = k + 1;
            o.outcome = s.beta0 + s.beta1 * o.grade + mu[c] + sd * z(rng);
            flagged = flagged || o.outcome < cut[k];
            o.tested_in = flagged;
            obs.push_back(o);
          }
        }
      }
    }
  }
  return PanelDataset(std::move(obs), {}, true);
}

PanelDataset apply_effect(const PanelDataset& panel, const EffectSpec& spec, std::uint64_t seed,
                          std::uint64_t replicate) {
  spec.validate();
  std::vector<double> y(panel.size());
  for (size_t i = 0; i < panel.size(); ++i) y[i] = panel[i].outcome;
  switch (spec.regime) {
    case Regime::null:
      break;
    case Regime::effect1:
    case Regime::effect2: {
      if (!panel.has_tested_in()) {
        fail(ErrorKind::validation, "effect regime needs tested_in flags on the panel");
      }
      if (spec.tau == 0.0) break;
      std::vector<int> first(panel.n_units(), std::numeric_limits<int>::max());
      if (spec.defer) {
        for (size_t i = 0; i < panel.size(); ++i) {
          if (panel[i].tested_in) first[panel[i].unit] = std::min(first[panel[i].unit], panel[i].year);
        }
      }
      const double spill = spec.regime == Regime::effect2 ? spec.p * spec.tau : 0.0;
      for (size_t i = 0; i < panel.size(); ++i) {
        const auto& o = panel[i];
        if (!o.treatment) continue;
        if (o.tested_in) {
          if (!spec.defer || o.year > first[o.unit]) y[i] += spec.tau;
        } else if (spill != 0.0) {
          y[i] -= spill;
        }
      }
      break;
    }
    case Regime::effect3: {
      if (spec.tau == 0.0) break;
      auto rng = stream(seed, replicate, Stage::effect);
      std::normal_distribution<double> z;
      const double sd = spec.sd_reading ? 2.5 * spec.tau : std::sqrt(2.5 * spec.tau);
      for (size_t i = 0; i < panel.size(); ++i) {
        if (panel[i].treatment) y[i] += spec.tau + sd * z(rng);
      }
      break;
    }
  }
  return panel.with_outcomes(std::move(y));
}

// ---------------------------------------------------------------------------
// Expected proportions and calibration

namespace {

struct CellLayout {
  GroupKey key;
  int units = 0;  // units per cluster
};

std::vector<CellLayout> layout(const Scenario& s) {
  std::vector<CellLayout> cells;
  for (const auto& cohort : s.cohorts) {
    for (auto [entry_grade, units] : cohort.units_per_cluster) {
      const int years = span_years(s, cohort.entry_year, entry_grade);
      for (int k = 1; k <= years; ++k) cells.push_back({{cohort.cohort, entry_grade, k}, units});
    }
  }
  return cells;
}

// P(flagged by participation year k) for each k of one entry grade.
std::vector<double> flag_probabilities(const Scenario& s, int entry_grade, int years) {
  std::vector<double> z(years);  // standardized cutoffs relative to mean given mu = 0
  const double se = std::sqrt(s.sigma2_eps);
  const double sm = std::sqrt(s.sigma2_mu);
  for (int k = 0; k < years; ++k) {
    const int grade = entry_grade + k;
    z[k] = threshold_for(s, grade) - (s.beta0 + s.beta1 * grade + s.gamma0);
  }
  // Probability of staying unflagged through each year, given mu.
  auto survive = [&](double mu, std::vector<double>& out) {
    double acc = 1.0;
    for (int k = 0; k < years; ++k) {
      const double gap = z[k] - mu;
      double q;
      if (se > 0) {
        q = 1.0 - normal_cdf(gap / se);
      } else {
        q = gap > 0 ? 0.0 : 1.0;  // flagged when the outcome falls below the cutoff
      }
      acc *= q;
      out[k] = acc;
    }
  };
  std::vector<double> result(years, 0.0);
  std::vector<double> tmp(years);
  if (sm == 0.0) {
    survive(0.0, tmp);
    for (int k = 0; k < years; ++k) result[k] = 1.0 - tmp[k];
    return result;
  }
  for (int k = 0; k < years; ++k) {
    auto f = [&](double u) {
      survive(sm * u, tmp);
      return std::exp(-0.5 * u * u) * tmp[k];
    };
    const double integral =
        boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -9.0, 9.0, 8, 1e-13);
    result[k] = 1.0 - integral / std::sqrt(2.0 * M_PI);
  }
  return result;
}

}  // namespace

std::map<GroupKey, double> expected_group_proportions(const Scenario& s) {
  std::map<GroupKey, double> out;
  for (const auto& cohort : s.cohorts) {
    for (auto [entry_grade, units] : cohort.units_per_cluster) {
      const int years = span_years(s, cohort.entry_year, entry_grade);
      const auto probs = flag_probabilities(s, entry_grade, years);
      for (int k = 1; k <= years; ++k) out[{cohort.cohort, entry_grade, k}] = probs[k - 1];
    }
  }
  return out;
}

std::vector<double> expected_year_proportions(const Scenario& s) {
  const auto probs = expected_group_proportions(s);
  std::vector<double> num(s.n_years, 0.0), den(s.n_years, 0.0);
  for (const auto& cell : layout(s)) {
    num[cell.key.year - 1] += cell.units * probs.at(cell.key);
    den[cell.key.year - 1] += cell.units;
  }
  std::vector<double> out(s.n_years, std::numeric_limits<double>::quiet_NaN());
  for (int k = 0; k < s.n_years; ++k) {
    if (den[k] > 0) out[k] = num[k] / den[k];
  }
  return out;
}

Calibration calibrate_thresholds(const Scenario& scenario, const std::vector<double>& targets) {
  if (targets.empty() || static_cast<int>(targets.size()) > scenario.n_years) {
    fail(ErrorKind::validation, "calibration needs between 1 and n_years targets");
  }
  for (double t : targets) {
    if (!(t > 0 && t < 1)) fail(ErrorKind::validation, "calibration targets must lie in (0, 1)");
  }
  const double total_sd = std::sqrt(scenario.total_variance());
  if (!(scenario.sigma2_eps > 0)) {
    fail(ErrorKind::validation, "calibration needs a positive residual variance");
  }
  Scenario s = scenario;
  // Start every grade at the median of its outcome distribution.
  for (int g = 0; g <= s.max_grade; ++g) {
    if (!s.thresholds.count(g) || !std::isfinite(s.thresholds[g])) {
      s.thresholds[g] = s.beta0 + s.beta1 * g + s.gamma0;
    }
  }
  Calibration cal;
  const int K = static_cast<int>(targets.size());
  for (cal.sweeps = 1; cal.sweeps <= 500; ++cal.sweeps) {
    for (int k = 0; k < K; ++k) {
      const int grade = k;  // grade g drives participation year g + 1
      const double center = s.beta0 + s.beta1 * grade + s.gamma0;
      double lo = center - 12.0 * total_sd;
      double hi = center + 12.0 * total_sd;
      for (int it = 0; it < 200 && hi - lo > 1e-12 * (1.0 + std::abs(center)); ++it) {
        const double mid = 0.5 * (lo + hi);
        s.thresholds[grade] = mid;
        const double got = expected_year_proportions(s)[k];
        if (got < targets[k]) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      s.thresholds[grade] = 0.5 * (lo + hi);
    }
    const auto achieved = expected_year_proportions(s);
    cal.max_abs_deviation = 0.0;
    for (int k = 0; k < K; ++k) {
      cal.max_abs_deviation = std::max(cal.max_abs_deviation, std::abs(achieved[k] - targets[k]));
    }
    if (cal.max_abs_deviation < 1e-9) break;
  }
  cal.sweeps = std::min(cal.sweeps, 500);
  cal.thresholds = s.thresholds;
  cal.achieved = expected_year_proportions(s);
  return cal;
}

// ---------------------------------------------------------------------------
// Power

std::vector<MethodDecision> run_methods(const PanelDataset& panel, const std::vector<Method>& methods,
                                        double alpha, const AnalysisOptions& options) {
  std::vector<MethodDecision> out(methods.size());
  std::optional<GroupEffects> effects;
  std::optional<CovarianceEstimate> cov;
  std::string shared_error;
  auto shared = [&]() -> bool {
    if (effects || !shared_error.empty()) return shared_error.empty();
    try {
      effects = estimate_effects(panel, options.effect_method, options.covariates);
      CovarianceOptions copts;
      copts.variant = options.variant;
      copts.residuals = options.residuals;
      copts.keep_df_kernels = options.df_rule == DfRule::satterthwaite;
      cov = cluster_covariance(panel, *effects, copts);
    } catch (const Error& e) {
      shared_error = e.what();
      effects.reset();
    }
    return shared_error.empty();
  };
  for (size_t m = 0; m < methods.size(); ++m) {
    auto& d = out[m];
    try {
      switch (methods[m]) {
        case Method::pwrd:
        case Method::flat: {
          if (!shared()) {
            d.error = shared_error;
            continue;
          }
          AggregationWeights w;
          Eigen::MatrixXd sigma = cov->sigma_hat;
          if (methods[m] == Method::pwrd) {
            const auto p0 = align_p0(estimate_p0(panel), *effects);
            PwrdOptions popts;
            popts.ridge = options.ridge;
            w = pwrd_weights(sigma, p0, popts);
            sigma = *w.sigma;
          } else {
            w = flat_weights(*effects);
          }
          const double df = options.df_rule == DfRule::satterthwaite ? small_sample_df(*cov, w.omega)
                                                                      : cov->df;
          d.test = aggregate_test(effects->delta_hat, sigma, df, w.omega, options.delta0,
                                  options.alternative);
          break;
        }
        case Method::mixed:
        case Method::exit: {
          AnalysisReport r = analyze(panel, methods[m], options);
          d.test = r.test;
          break;
        }
      }
      d.ok = true;
      d.reject = d.test.rejects(alpha);
    } catch (const Error& e) {
      d.error = e.what();
    }
  }
  return out;
}

PowerResult run_power(const Scenario& scenario, const std::vector<EffectSpec>& settings,
                      const PowerOptions& options) {
  scenario.validate();
  if (options.n_reps < 1) fail(ErrorKind::validation, "at least one replicate is required");
  if (!(options.alpha > 0 && options.alpha < 1)) fail(ErrorKind::validation, "alpha must lie in (0, 1)");
  if (settings.empty() || options.methods.empty()) {
    fail(ErrorKind::validation, "power run needs at least one effect setting and one method");
  }
  for (const auto& s : settings) s.validate();
  const size_t R = static_cast<size_t>(options.n_reps);
  const size_t S = settings.size();
  const size_t M = options.methods.size();
  // 0 accept, 1 reject, 2 excluded.
  std::vector<std::uint8_t> outcome(R * S * M, 2);
  std::vector<std::string> first_error(S * M);
  std::vector<std::vector<std::pair<size_t, std::string>>> worker_errors;

  const int W = std::max(1, std::min<int>(options.workers, static_cast<int>(R)));
  worker_errors.resize(W);
  std::vector<std::exception_ptr> failures(W);
  auto work = [&](int w) {
    try {
      for (size_t r = static_cast<size_t>(w); r < R; r += static_cast<size_t>(W)) {
        const PanelDataset base = generate_panel(scenario, r);
        for (size_t s = 0; s < S; ++s) {
          const PanelDataset panel = apply_effect(base, settings[s], scenario.seed, r);
          const auto decisions = run_methods(panel, options.methods, options.alpha, options.analysis);
          for (size_t m = 0; m < M; ++m) {
            const auto& d = decisions[m];
            outcome[(r * S + s) * M + m] = d.ok ? (d.reject ? 1 : 0) : 2;
            if (!d.ok) worker_errors[w].push_back({s * M + m, d.error});
          }
        }
      }
    } catch (...) {
      failures[w] = std::current_exception();
    }
  };
  if (W == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < W; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }
  for (auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  PowerResult result;
  for (const auto& errs : worker_errors) {
    for (const auto& [cell, msg] : errs) {
      if (first_error[cell].empty()) first_error[cell] = msg;
    }
  }
  for (size_t s = 0; s < S; ++s) {
    for (size_t m = 0; m < M; ++m) {
      PowerRow row;
      row.method = options.methods[m];
      row.regime = settings[s].regime;
      row.effect_level = settings[s].tau;
      row.icc = scenario.icc();
      row.p_spill = settings[s].regime == Regime::effect2 ? settings[s].p : 0.0;
      row.seed = scenario.seed;
      row.alpha = options.alpha;
      for (size_t r = 0; r < R; ++r) {
        const auto v = outcome[(r * S + s) * M + m];
        if (v == 2) {
          ++row.excluded;
        } else {
          ++row.n_reps;
          row.rejections += v;
        }
      }
      if (row.excluded > 0) {
        result.warnings.push_back(to_string(row.method) + " at effect " + format_double(row.effect_level) +
                                  ": " + std::to_string(row.excluded) + " replicate(s) excluded (" +
                                  first_error[s * M + m] + ")");
      }
      if (row.excluded > options.max_excluded_share * static_cast<double>(R)) {
        fail(ErrorKind::numerical, "more than " + format_double(100 * options.max_excluded_share) +
                                       "% of replicates failed for " + to_string(row.method) +
                                       " at effect " + format_double(row.effect_level) + ": " +
                                       first_error[s * M + m]);
      }
      if (row.n_reps > 0) {
        row.power = static_cast<double>(row.rejections) / row.n_reps;
        row.mc_se = std::sqrt(row.power * (1.0 - row.power) / row.n_reps);
      } else {
        row.power = std::numeric_limits<double>::quiet_NaN();
        row.mc_se = std::numeric_limits<double>::quiet_NaN();
      }
      result.rows.push_back(row);
    }
  }
  // Effect 2 should still be positive on average among treated rows.
  for (const auto& s : settings) {
    if (s.regime != Regime::effect2 || s.tau == 0.0) continue;
    const auto probs = expected_group_proportions(scenario);
    double flagged = 0.0, total = 0.0;
    for (const auto& cell : layout(scenario)) {
      flagged += cell.units * probs.at(cell.key);
      total += cell.units;
    }
    const double share = flagged / total;
    const double mean_effect = s.tau * (share - s.p * (1.0 - share));
    if (mean_effect <= 0) {
      result.warnings.push_back("effect2 with p = " + format_double(s.p) +
                                " is not positive in aggregate (expected treated shift " +
                                format_double(mean_effect) + ")");
    }
  }
  return result;
}

const PowerRow& PowerResult::find(Method m, double effect_level, double p_spill) const {
  for (const auto& r : rows) {
    if (r.method == m && r.effect_level == effect_level && (p_spill < 0 || r.p_spill == p_spill)) return r;
  }
  fail(ErrorKind::validation, "no power row for " + to_string(m) + " at effect " + format_double(effect_level));
}

PowerResult estimate_power(const Scenario& scenario, const std::vector<double>& effect_grid,
                           const PowerOptions& options) {
  if (options.n_reps < 100) fail(ErrorKind::validation, "power estimation needs at least 100 replicates");
  std::vector<EffectSpec> settings;
  for (double level : effect_grid) {
    EffectSpec e = scenario.effect;
    if (e.regime == Regime::null && level != 0.0) {
      fail(ErrorKind::validation, "null regime takes only effect level 0");
    }
    e.tau = level;
    settings.push_back(e);
  }
  return run_power(scenario, settings, options);
}

PowerResult icc_sweep(const Scenario& scenario, const std::vector<double>& icc_grid,
                      const PowerOptions& options) {
  PowerResult all;
  for (double icc : icc_grid) {
    if (!(icc >= 0 && icc < 0.5)) fail(ErrorKind::validation, "ICC grid values must lie in [0, 0.5)");
    const Scenario s = scenario.with_icc(icc);
    PowerResult part = estimate_power(s, {scenario.effect.tau}, options);
    all.rows.insert(all.rows.end(), part.rows.begin(), part.rows.end());
    all.warnings.insert(all.warnings.end(), part.warnings.begin(), part.warnings.end());
  }
  return all;
}

PowerResult negative_effect_sweep(const Scenario& scenario, double tau, const std::vector<double>& p_grid,
                                  const PowerOptions& options) {
  if (options.n_reps < 100) fail(ErrorKind::validation, "power estimation needs at least 100 replicates");
  std::vector<EffectSpec> settings;
  for (double p : p_grid) {
    EffectSpec e = scenario.effect;
    e.regime = Regime::effect2;
    e.tau = tau;
    e.p = p;
    settings.push_back(e);
  }
  return run_power(scenario, settings, options);
}

void write_power_csv(const PowerResult& result, std::ostream& out) {
  csv::write_row(out, {"method", "regime", "effect_level", "icc", "p_spill", "power", "mc_se", "n_reps", "seed"});
  for (const auto& r : result.rows) {
    csv::write_row(out, {to_string(r.method), to_string(r.regime), format_double(r.effect_level),
                         format_double(r.icc), format_double(r.p_spill), format_double(r.power),
                         format_double(r.mc_se), std::to_string(r.n_reps), std::to_string(r.seed)});
  }
}

}  // namespace pwrd
