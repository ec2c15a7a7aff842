#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pwrd/covariance.hpp"
#include "pwrd/group_effects.hpp"
#include "pwrd/mixed_model.hpp"
#include "pwrd/panel.hpp"
#include "pwrd/weights.hpp"

namespace pwrd {

enum class Method { pwrd, flat, mixed, exit };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct AnalysisOptions {
  EffectMethod effect_method = EffectMethod::diffmeans;
  std::vector<std::string> covariates;
  CovVariant variant = CovVariant::cr2;
  ResidualSource residuals = ResidualSource::both_arms;
  DfRule df_rule = DfRule::clusters_minus_2;
  Alternative alternative = Alternative::greater;
  bool ridge = false;
  Eigen::VectorXd delta0;  // empty: zero vector
};

struct AnalysisReport {
  Method method = Method::pwrd;
  std::optional<GroupEffects> effects;
  std::optional<TestInProportions> p0;
  Eigen::VectorXd p0_aligned;  // empty when the panel has no flags
  std::optional<CovarianceEstimate> cov;
  std::optional<AggregationWeights> weights;
  AggregatedTest test;
  double slope = 0.0;                // NaN without test-in proportions
  double relative_efficiency = 0.0;  // PWRD vs flat; NaN when undefined
  std::optional<MixedFit> mixed;
  std::optional<ExitEstimate> exit;
  std::vector<std::string> warnings;
};

// Full pipeline for one method: effects, covariance, weights, test for
// pwrd/flat; the random intercept fit for mixed; the exit estimate for exit.
AnalysisReport analyze(const PanelDataset& panel, Method method, const AnalysisOptions& options = {});

}  // namespace pwrd
