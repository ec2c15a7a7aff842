#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "pwrd/analysis.hpp"
#include "pwrd/panel.hpp"

namespace pwrd {

enum class Regime { null, effect1, effect2, effect3 };

std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);

struct EffectSpec {
  Regime regime = Regime::null;
  double tau = 0.0;  // effect1/effect2 size; mean l for effect3
  double p = 0.0;    // effect2 spill fraction
  // effect3 draws have variance 2.5 * l; true reads 2.5 * l as the sd.
  bool sd_reading = false;
  // effect1/effect2 start the year after the first flagged year.
  bool defer = false;

  void validate() const;
  static EffectSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct CohortSpec {
  int cohort = 1;
  int entry_year = 1;                    // study year in which the cohort enters
  std::map<int, int> units_per_cluster;  // entry grade -> units per cluster
};

struct Scenario {
  std::string name = "custom";
  int n_clusters = 52;  // consecutive ordinals form randomization pairs
  int n_years = 4;      // study years
  int max_grade = 3;    // units leave after this grade
  std::vector<CohortSpec> cohorts;
  double beta0 = 100.0;
  double beta1 = 10.0;
  double gamma0 = 0.0;
  double sigma2_eps = 191.25;
  double sigma2_mu = 33.75;
  std::map<int, double> thresholds;           // grade -> cutoff
  std::vector<double> calibration_targets;    // per participation year; empty if fixed
  EffectSpec effect;
  std::uint64_t seed = 20240601;

  double icc() const;
  double total_variance() const { return sigma2_eps + sigma2_mu; }

  // Same total variance at a new ICC; thresholds are recalibrated when the
  // scenario carries calibration targets.
  Scenario with_icc(double icc) const;

  void validate() const;
  static Scenario from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  // 52 clusters; cohort 1 enters in year 1 at grades K-3, cohorts 2-4 enter
  // kindergarten in years 2-4; calibrated to the default test-in profile.
  static Scenario default_layout();
  // One kindergarten cohort followed for four years (four groups).
  static Scenario single_cohort(int n_clusters, int units_per_cluster);
};

// Default control test-in profile by participation year.
std::vector<double> default_test_in_targets();

// Streams are keyed by (seed, replicate, stage) so draws do not depend on
// execution order.
enum class Stage : std::uint64_t { assignment = 1, cluster = 2, residual = 3, effect = 4 };

PanelDataset generate_panel(const Scenario& scenario, std::uint64_t replicate);

PanelDataset apply_effect(const PanelDataset& panel, const EffectSpec& spec, std::uint64_t seed,
                          std::uint64_t replicate);

// Expected control test-in proportion per group of the scenario's layout,
// keyed by (cohort, entry grade, participation year).
std::map<GroupKey, double> expected_group_proportions(const Scenario& scenario);

// Row-weighted expected proportion per participation year 1..n_years.
std::vector<double> expected_year_proportions(const Scenario& scenario);

struct Calibration {
  std::map<int, double> thresholds;
  std::vector<double> achieved;
  int sweeps = 0;
  double max_abs_deviation = 0.0;
};

// Gauss-Seidel bisection: the cutoff for grade g targets participation
// year g + 1.
Calibration calibrate_thresholds(const Scenario& scenario, const std::vector<double>& targets);

struct PowerRow {
  Method method = Method::pwrd;
  Regime regime = Regime::null;
  double effect_level = 0.0;
  double icc = 0.0;
  double p_spill = 0.0;
  double power = 0.0;
  double mc_se = 0.0;
  int n_reps = 0;  // replicates entering the rate
  int rejections = 0;
  int excluded = 0;
  std::uint64_t seed = 0;
  double alpha = 0.05;
};

struct PowerResult {
  std::vector<PowerRow> rows;
  std::vector<std::string> warnings;

  const PowerRow& find(Method m, double effect_level, double p_spill = -1.0) const;
};

struct PowerOptions {
  std::vector<Method> methods = {Method::pwrd, Method::flat, Method::mixed, Method::exit};
  int n_reps = 1000;
  double alpha = 0.05;
  int workers = 1;
  AnalysisOptions analysis;
  double max_excluded_share = 0.02;
};

// One generated panel per replicate, shared by every effect setting.
PowerResult run_power(const Scenario& scenario, const std::vector<EffectSpec>& settings,
                      const PowerOptions& options);

// Effect grid over tau (effect1/effect2) or l (effect3) for the scenario's
// effect regime.
PowerResult estimate_power(const Scenario& scenario, const std::vector<double>& effect_grid,
                           const PowerOptions& options);

PowerResult icc_sweep(const Scenario& scenario, const std::vector<double>& icc_grid,
                      const PowerOptions& options);

PowerResult negative_effect_sweep(const Scenario& scenario, double tau,
                                  const std::vector<double>& p_grid, const PowerOptions& options);

void write_power_csv(const PowerResult& result, std::ostream& out);

// Rejection decisions for several methods on one panel; effects and
// covariance are shared between pwrd and flat.
struct MethodDecision {
  bool ok = false;
  bool reject = false;
  AggregatedTest test;
  std::string error;
};

std::vector<MethodDecision> run_methods(const PanelDataset& panel, const std::vector<Method>& methods,
                                        double alpha, const AnalysisOptions& options);

}  // namespace pwrd
