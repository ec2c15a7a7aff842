#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pwrd/group_effects.hpp"
#include "pwrd/panel.hpp"

namespace pwrd {

std::string to_string(CovVariant v);
CovVariant cov_variant_from_string(const std::string& s);

// both_arms: per-arm cell-mean residuals from every cluster (standard
// sandwich). control_only: control clusters' residuals also stand in for the
// treated arm's sampling noise.
enum class ResidualSource { both_arms, control_only };

std::string to_string(ResidualSource r);
ResidualSource residual_source_from_string(const std::string& s);

enum class DfRule { clusters_minus_2, satterthwaite };

std::string to_string(DfRule r);
DfRule df_rule_from_string(const std::string& s);

struct CovarianceOptions {
  CovVariant variant = CovVariant::cr2;
  ResidualSource residuals = ResidualSource::both_arms;
  // Keep the per-group cluster kernels needed by small_sample_df.
  bool keep_df_kernels = false;
};

struct CovarianceEstimate {
  Eigen::MatrixXd sigma_hat;  // G x G, Cov(delta_hat)
  CovVariant variant = CovVariant::cr2;
  ResidualSource residuals = ResidualSource::both_arms;
  int n_clusters = 0;
  int n_treated_clusters = 0;
  int n_control_clusters = 0;
  double df = 0.0;  // n_clusters - 2

  Eigen::MatrixXd scores;  // n_clusters x G adjusted score sums
  // K_g[c, d]: covariance of the cluster-c and cluster-d score pieces of
  // group g under a working independence model, one matrix per group.
  std::vector<Eigen::MatrixXd> df_kernels;
};

// Sandwich covariance of the stacked per-group, per-arm mean equations.
// Throws Error(degenerate) with fewer than 2 clusters.
CovarianceEstimate cluster_covariance(const PanelDataset& panel, const GroupEffects& effects,
                                      const CovarianceOptions& options = {});

// Bell-McCaffrey style Satterthwaite df for the contrast omega'delta_hat.
// Falls back to n_clusters - 2 when the approximation is not finite or an
// arm has fewer than two clusters. Requires keep_df_kernels.
double small_sample_df(const CovarianceEstimate& cov, const Eigen::VectorXd& omega);

}  // namespace pwrd
