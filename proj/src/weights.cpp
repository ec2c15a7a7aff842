#include "pwrd/weights.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "pwrd/error.hpp"
#include "pwrd/numeric.hpp"

namespace pwrd {

std::string to_string(WeightScheme s) {
  switch (s) {
    case WeightScheme::pwrd: return "pwrd";
    case WeightScheme::flat: return "flat";
    case WeightScheme::exit: return "exit";
    case WeightScheme::custom: return "custom";
  }
  return "custom";
}

std::string to_string(Alternative a) { return a == Alternative::greater ? "greater" : "two-sided"; }

Alternative alternative_from_string(const std::string& s) {
  if (s == "greater") return Alternative::greater;
  if (s == "two-sided") return Alternative::two_sided;
  fail(ErrorKind::validation, "unknown alternative '" + s + "' (expected greater or two-sided)");
}

namespace {

constexpr double kKktTol = 1e-8;

void check_inputs(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& p0) {
  const Eigen::Index G = p0.size();
  if (G == 0) fail(ErrorKind::validation, "empty test-in proportion vector");
  if (sigma.rows() != G || sigma.cols() != G) {
    fail(ErrorKind::validation, "covariance is " + std::to_string(sigma.rows()) + "x" +
                                    std::to_string(sigma.cols()) + " but there are " +
                                    std::to_string(G) + " groups");
  }
  if (!sigma.allFinite() || !p0.allFinite()) {
    fail(ErrorKind::validation, "non-finite entries in covariance or test-in proportions");
  }
  if ((p0.array() < 0.0).any()) {
    fail(ErrorKind::validation, "test-in proportions must be non-negative");
  }
  if (!(p0.array() > 0.0).any()) {
    fail(ErrorKind::degenerate, "no test-in signal: every test-in proportion is zero");
  }
}

// Exact minimizer of x'Sx/2 - p'x over x >= 0 (Lawson-Hanson style active
// set), warm-started from the support of `x`.
Eigen::VectorXd nonnegative_qp(const Eigen::MatrixXd& S, const Eigen::VectorXd& p,
                               Eigen::VectorXd x) {
  const Eigen::Index G = p.size();
  std::vector<char> active(G, 0);
  for (Eigen::Index g = 0; g < G; ++g) {
    if (x[g] > 0) {
      active[g] = 1;
    } else {
      x[g] = 0;
    }
  }
  auto solve_on = [&](const std::vector<char>& set) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index g = 0; g < G; ++g) {
      if (set[g]) idx.push_back(g);
    }
    Eigen::VectorXd z = Eigen::VectorXd::Zero(G);
    if (idx.empty()) return z;
    const Eigen::Index m = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd Ss(m, m);
    Eigen::VectorXd ps(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      ps[a] = p[idx[a]];
      for (Eigen::Index b = 0; b < m; ++b) Ss(a, b) = S(idx[a], idx[b]);
    }
    Eigen::VectorXd zs = Ss.ldlt().solve(ps);
    for (Eigen::Index a = 0; a < m; ++a) z[idx[a]] = zs[a];
    return z;
  };

  const double scale = p.cwiseAbs().maxCoeff();
  for (int iter = 0; iter < 20 * static_cast<int>(G) + 20; ++iter) {
    Eigen::VectorXd z = solve_on(active);
    bool feasible = true;
    for (Eigen::Index g = 0; g < G; ++g) {
      if (active[g] && z[g] <= 0) feasible = false;
    }
    if (feasible) {
      x = z;
      const Eigen::VectorXd w = p - S * x;
      Eigen::Index best = -1;
      double best_w = 1e-13 * scale;
      for (Eigen::Index g = 0; g < G; ++g) {
        if (!active[g] && w[g] > best_w) {
          best_w = w[g];
          best = g;
        }
      }
      if (best < 0) return x;
      active[best] = 1;
      continue;
    }
    // Step from x toward z until the first active coordinate hits zero.
    double alpha = 1.0;
    for (Eigen::Index g = 0; g < G; ++g) {
      if (active[g] && z[g] <= 0) alpha = std::min(alpha, x[g] / (x[g] - z[g]));
    }
    x += alpha * (z - x);
    for (Eigen::Index g = 0; g < G; ++g) {
      if (active[g] && x[g] <= 1e-15 * (1.0 + std::abs(x.maxCoeff()))) {
        active[g] = 0;
        x[g] = 0;
      }
    }
  }
  return x;
}

// Accelerated projected gradient on x'Sx/2 - p'x, x >= 0, from flat weights.
Eigen::VectorXd projected_gradient(const Eigen::MatrixXd& S, const Eigen::VectorXd& p,
                                   double lipschitz, int iterations) {
  const Eigen::Index G = p.size();
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(G);
  // Best multiple of the flat direction.
  Eigen::VectorXd x = ones * std::max(0.0, p.sum() / ones.dot(S * ones));
  Eigen::VectorXd y = x;
  double t = 1.0;
  const double step = 1.0 / lipschitz;
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd x_next = (y - step * (S * y - p)).cwiseMax(0.0);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = x_next + ((t - 1.0) / t_next) * (x_next - x);
    if ((x_next - x).cwiseAbs().maxCoeff() <= 1e-15 * (1.0 + x_next.cwiseAbs().maxCoeff())) {
      return x_next;
    }
    x = std::move(x_next);
    t = t_next;
  }
  return x;
}

}  // namespace

double kkt_violation(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& p0,
                     const Eigen::VectorXd& omega) {
  const double wp = omega.dot(p0);
  const Eigen::VectorXd Sw = sigma * omega;
  const double wSw = omega.dot(Sw);
  if (!(wp > 0) || !(wSw > 0)) return std::numeric_limits<double>::infinity();
  const Eigen::VectorXd grad = p0 / wp - Sw / wSw;
  // The common value on the support is omega'grad = 0 for weights summing to one.
  double common = 0.0;
  int n_active = 0;
  for (Eigen::Index g = 0; g < omega.size(); ++g) {
    if (omega[g] > 0) {
      common += grad[g];
      ++n_active;
    }
  }
  common /= std::max(n_active, 1);
  const double scale = std::max(1.0, (p0 / wp).cwiseAbs().maxCoeff());
  double worst = 0.0;
  for (Eigen::Index g = 0; g < omega.size(); ++g) {
    const double dev = omega[g] > 0 ? std::abs(grad[g] - common) : grad[g] - common;
    worst = std::max(worst, dev / scale);
  }
  return worst;
}

AggregationWeights pwrd_weights(const Eigen::MatrixXd& sigma_in, const Eigen::VectorXd& p0,
                                const PwrdOptions& options) {
  check_inputs(sigma_in, p0);
  const Eigen::Index G = p0.size();
  Eigen::MatrixXd sigma = 0.5 * (sigma_in + sigma_in.transpose());

  AggregationWeights out;
  out.scheme = WeightScheme::pwrd;
  out.p0 = p0;

  const double mean_diag = sigma.trace() / G;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma, Eigen::EigenvaluesOnly);
  double min_eig = es.eigenvalues().minCoeff();
  const double gate = 1e-12 * mean_diag;
  if (!(mean_diag > 0) || !(min_eig > gate)) {
    if (!options.ridge || !(mean_diag > 0)) {
      fail(ErrorKind::numerical, "covariance is singular or not positive definite (smallest "
                                 "eigenvalue " + format_double(min_eig) +
                                 "); rerun with --ridge to add a small diagonal load");
    }
    out.ridge = 1e-8 * mean_diag;
    sigma.diagonal().array() += out.ridge;
    min_eig += out.ridge;
    if (!(min_eig > gate)) {
      fail(ErrorKind::numerical, "covariance remains singular after ridge regularization");
    }
    out.notes.push_back("ridge " + format_double(out.ridge) + " added to the diagonal");
  }
  out.sigma = sigma;

  const Eigen::VectorXd x = sigma.ldlt().solve(p0);
  Eigen::VectorXd xp = x.cwiseMax(0.0);
  for (Eigen::Index g = 0; g < G; ++g) {
    if (!(x[g] > 0)) out.clipped_groups.push_back(static_cast<int>(g));
  }
  const double total = xp.sum();
  if (total > 0) {
    out.clip_formula_omega = xp / total;
    out.kkt_passed = kkt_violation(sigma, p0, out.clip_formula_omega) <= kKktTol;
  } else {
    out.kkt_passed = false;
    out.notes.push_back("clipped solution degenerate; use fallback solver");
  }
  if (out.kkt_passed) {
    out.omega = out.clip_formula_omega;
    return out;
  }

  // Constrained optimum: the slope maximizer on the simplex is proportional
  // to argmin x'Sx/2 - p'x over x >= 0.
  out.used_fallback = true;
  const double lipschitz = es.eigenvalues().maxCoeff() + out.ridge;
  Eigen::VectorXd warm = projected_gradient(sigma, p0, lipschitz, options.max_iterations);
  Eigen::VectorXd sol = nonnegative_qp(sigma, p0, warm);
  const double s = sol.sum();
  if (!(s > 0)) fail(ErrorKind::numerical, "constrained weight solver returned no support");
  out.omega = sol / s;
  if (kkt_violation(sigma, p0, out.omega) > kKktTol) {
    fail(ErrorKind::numerical, "constrained weight solver did not reach optimality");
  }
  out.notes.push_back(total > 0 ? "clipped formula failed the optimality check; returned the "
                                  "constrained optimum"
                                : "returned the constrained optimum");
  return out;
}

AggregationWeights flat_weights(const std::vector<int>& n) {
  double N = 0;
  for (int v : n) {
    if (v < 0) fail(ErrorKind::validation, "negative group size");
    N += v;
  }
  if (!(N > 0)) fail(ErrorKind::degenerate, "flat weights need at least one observation");
  AggregationWeights out;
  out.scheme = WeightScheme::flat;
  out.omega.resize(static_cast<Eigen::Index>(n.size()));
  for (size_t g = 0; g < n.size(); ++g) out.omega[g] = n[g] / N;
  return out;
}

AggregationWeights flat_weights(const GroupEffects& effects) { return flat_weights(effects.n); }

AggregatedTest aggregate_test(const Eigen::VectorXd& delta_hat, const Eigen::MatrixXd& cov,
                              double df, const Eigen::VectorXd& omega,
                              const Eigen::VectorXd& delta0, Alternative alternative) {
  const Eigen::Index G = delta_hat.size();
  if (omega.size() != G || cov.rows() != G || cov.cols() != G ||
      (delta0.size() != 0 && delta0.size() != G)) {
    fail(ErrorKind::validation, "dimension mismatch between estimates, covariance, and weights");
  }
  if (std::isnan(df) || df <= 0) {
    fail(ErrorKind::degenerate, "degrees of freedom must be positive (got " + format_double(df) + ")");
  }
  const double var = omega.dot(cov * omega);
  if (!(var > 0) || !std::isfinite(var)) {
    fail(ErrorKind::degenerate, "aggregate variance is not positive");
  }
  AggregatedTest t;
  t.estimate = omega.dot(delta_hat);
  t.null_value = delta0.size() ? omega.dot(delta0) : 0.0;
  t.se = std::sqrt(var);
  t.t_stat = (t.estimate - t.null_value) / t.se;
  t.df = df;
  t.alternative = alternative;
  if (alternative == Alternative::greater) {
    t.p_value = t_cdf(-t.t_stat, df);
  } else {
    t.p_value = std::min(1.0, 2.0 * t_cdf(-std::abs(t.t_stat), df));
  }
  return t;
}

double test_slope(const Eigen::VectorXd& omega, const Eigen::VectorXd& p0,
                  const Eigen::MatrixXd& sigma) {
  if (omega.size() != p0.size() || sigma.rows() != p0.size() || sigma.cols() != p0.size()) {
    fail(ErrorKind::validation, "dimension mismatch in test slope");
  }
  const double var = omega.dot(sigma * omega);
  if (!(var > 0)) fail(ErrorKind::degenerate, "zero variance in test slope");
  return omega.dot(p0) / std::sqrt(var);
}

double pitman_relative_efficiency(const Eigen::VectorXd& w1, const Eigen::VectorXd& w2,
                                  const Eigen::VectorXd& p0, const Eigen::MatrixXd& sigma) {
  const double h1 = test_slope(w1, p0, sigma);
  const double h2 = test_slope(w2, p0, sigma);
  if (!(h2 > 0)) fail(ErrorKind::degenerate, "zero test slope in the reference weighting");
  const double r = h1 / h2;
  return r * r;
}

ExternalAggregation aggregate_external(const Eigen::VectorXd& delta_hat, const Eigen::MatrixXd& cov,
                                       const Eigen::VectorXd& p0, const Eigen::VectorXd& delta0,
                                       Alternative alternative, double df,
                                       const PwrdOptions& options) {
  if (delta_hat.size() != p0.size()) {
    fail(ErrorKind::validation, "estimate and test-in vectors differ in length");
  }
  ExternalAggregation out;
  out.weights = pwrd_weights(cov, p0, options);
  const Eigen::MatrixXd& used = *out.weights.sigma;
  out.test = aggregate_test(delta_hat, used, df, out.weights.omega, delta0, alternative);
  out.slope = test_slope(out.weights.omega, p0, used);
  return out;
}

}  // namespace pwrd
