#pragma once

#include <string>
#include <vector>

#include "pwrd/panel.hpp"

namespace pwrd {

struct VarianceComponents {
  double sigma2_eps = 0.0;
  double sigma2_mu = 0.0;
  double icc = 0.0;
};

struct MixedFit {
  double tau_hat = 0.0;
  double se_model = 0.0;
  double se_cr = 0.0;  // CR1 cluster-robust
  double df = 0.0;     // n_clusters - 2
  VarianceComponents components;
  std::vector<std::string> fixed_effects;  // coefficient names, intercept first
  std::vector<std::string> warnings;
};

struct MixedOptions {
  bool grade_effect = true;  // grade as a fixed covariate when it varies
};

// Random cluster intercept model: Y = b0 + tau Z + b'X + mu_cluster + eps.
// Variance components by the between/within method of moments, floored at
// zero; then GLS with the implied compound-symmetric cluster blocks.
MixedFit fit_random_intercept(const PanelDataset& panel,
                              const std::vector<std::string>& covariates = {},
                              const MixedOptions& options = {});

}  // namespace pwrd
