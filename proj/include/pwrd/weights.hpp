#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pwrd/group_effects.hpp"

namespace pwrd {

enum class WeightScheme { pwrd, flat, exit, custom };

std::string to_string(WeightScheme s);

struct AggregationWeights {
  Eigen::VectorXd omega;
  WeightScheme scheme = WeightScheme::custom;
  // Positions where the unconstrained Sigma^{-1} p0 was not positive.
  std::vector<int> clipped_groups;

  // PWRD provenance.
  std::optional<Eigen::VectorXd> p0;
  std::optional<Eigen::MatrixXd> sigma;
  Eigen::VectorXd clip_formula_omega;  // (Sigma^{-1}p0)_+ normalized; empty if degenerate
  bool kkt_passed = true;              // the clip formula met the optimality check
  bool used_fallback = false;          // returned omega came from the constrained solver
  double ridge = 0.0;                  // lambda added to the diagonal, 0 if none
  std::vector<std::string> notes;
};

struct PwrdOptions {
  bool ridge = false;
  int max_iterations = 5000;  // projected-gradient budget of the fallback
};

// omega proportional to (Sigma^{-1} p0)_+, checked against the first-order
// conditions on the simplex; falls back to the exact constrained maximizer
// of the test slope when the check fails.
AggregationWeights pwrd_weights(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& p0,
                                const PwrdOptions& options = {});

// omega_g = n_g / N.
AggregationWeights flat_weights(const std::vector<int>& n);
AggregationWeights flat_weights(const GroupEffects& effects);

// Largest violation of the simplex first-order conditions of
// log(omega'p) - log(omega'Sigma omega)/2 at omega (0 at the optimum).
double kkt_violation(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& p0,
                     const Eigen::VectorXd& omega);

enum class Alternative { two_sided, greater };

std::string to_string(Alternative a);
Alternative alternative_from_string(const std::string& s);

struct AggregatedTest {
  double estimate = 0.0;
  double null_value = 0.0;
  double se = 0.0;
  double t_stat = 0.0;
  double df = 0.0;
  double p_value = 1.0;
  Alternative alternative = Alternative::greater;

  bool rejects(double alpha) const { return p_value < alpha; }
};

// t = (omega'delta - omega'delta0) / sqrt(omega' cov omega). An infinite df
// uses the normal reference distribution. Empty delta0 means zero.
AggregatedTest aggregate_test(const Eigen::VectorXd& delta_hat, const Eigen::MatrixXd& cov,
                              double df, const Eigen::VectorXd& omega,
                              const Eigen::VectorXd& delta0 = {},
                              Alternative alternative = Alternative::greater);

// h(omega) = omega'p0 / sqrt(omega' Sigma omega).
double test_slope(const Eigen::VectorXd& omega, const Eigen::VectorXd& p0,
                  const Eigen::MatrixXd& sigma);

// (h(w1) / h(w2))^2.
double pitman_relative_efficiency(const Eigen::VectorXd& w1, const Eigen::VectorXd& w2,
                                  const Eigen::VectorXd& p0, const Eigen::MatrixXd& sigma);

struct ExternalAggregation {
  AggregationWeights weights;
  AggregatedTest test;
  double slope = 0.0;
};

// PWRD weights and test from summary statistics alone.
ExternalAggregation aggregate_external(const Eigen::VectorXd& delta_hat, const Eigen::MatrixXd& cov,
                                       const Eigen::VectorXd& p0, const Eigen::VectorXd& delta0 = {},
                                       Alternative alternative = Alternative::greater,
                                       double df = std::numeric_limits<double>::infinity(),
                                       const PwrdOptions& options = {});

}  // namespace pwrd
