#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pwrd/panel.hpp"

namespace pwrd {

enum class EffectMethod { diffmeans, peters_belson };

std::string to_string(EffectMethod m);
EffectMethod effect_method_from_string(const std::string& s);

struct ExcludedGroup {
  int g = 0;
  std::string reason;
};

// Control-arm linear fit for one group (Peters-Belson). Coefficients are
// ordered intercept first, then covariates in the order requested.
struct ControlFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd xtx_inv;   // (X'X)^{-1} of the control design
  Eigen::VectorXd treated_mean_x;  // column means of the treated design
};

struct GroupEffects {
  EffectMethod method = EffectMethod::diffmeans;
  std::vector<int> groups;  // panel group ordinals, catalog order
  std::vector<GroupKey> keys;
  std::vector<int> n;
  std::vector<int> n_treated;
  std::vector<int> n_control;
  Eigen::VectorXd delta_hat;
  std::vector<std::string> covariates;
  std::vector<size_t> covariate_columns;  // panel covariate indices
  std::vector<ControlFit> fits;           // filled for peters_belson only
  std::vector<ExcludedGroup> excluded;

  size_t size() const { return groups.size(); }
  // Position of panel group g in this vector, or -1.
  int position_of(int g) const;
};

struct TestInProportions {
  std::vector<int> groups;
  Eigen::VectorXd p_hat;
  std::vector<int> counts;  // control student-year rows per group
  std::vector<ExcludedGroup> excluded;
};

// Student-year level difference of arm means per cohort-year group. Groups
// missing an arm are excluded and listed.
GroupEffects estimate_effects_diffmeans(const PanelDataset& panel);

// Per-group least squares on control rows, averaged treated residuals.
// Throws Error(degenerate) naming the group on a rank-deficient design.
GroupEffects estimate_effects_peters_belson(const PanelDataset& panel,
                                            const std::vector<std::string>& covariates);

GroupEffects estimate_effects(const PanelDataset& panel, EffectMethod method,
                              const std::vector<std::string>& covariates = {});

// Control-arm share of tested_in rows per group. Throws Error(degenerate)
// "no test-in signal" when the panel carries no flags.
TestInProportions estimate_p0(const PanelDataset& panel);

// Restricts p0 to the groups of `effects`, in the same order. Throws when a
// group has no proportion.
Eigen::VectorXd align_p0(const TestInProportions& p0, const GroupEffects& effects);

enum class CovVariant { cr0, cr2 };

struct ExitEstimate {
  double estimate = 0.0;
  double se = 0.0;
  double df = 0.0;
  int n_rows = 0;
  int n_treated = 0;
  int n_control = 0;
  int n_clusters = 0;
};

// One row per unit (its latest follow-up year), pooled over groups.
PanelDataset exit_subset(const PanelDataset& panel);

ExitEstimate exit_observation_estimate(const PanelDataset& panel,
                                       CovVariant variant = CovVariant::cr2,
                                       EffectMethod method = EffectMethod::diffmeans,
                                       const std::vector<std::string>& covariates = {});

}  // namespace pwrd
