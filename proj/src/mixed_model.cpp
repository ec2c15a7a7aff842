#include "pwrd/mixed_model.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "pwrd/error.hpp"

namespace pwrd {

MixedFit fit_random_intercept(const PanelDataset& panel, const std::vector<std::string>& covariates,
                              const MixedOptions& options) {
  const int C = panel.n_clusters();
  if (C < 2) fail(ErrorKind::degenerate, "random intercept model needs at least 2 clusters");
  const size_t N = panel.size();

  MixedFit fit;
  fit.fixed_effects = {"intercept", "treatment"};
  std::vector<size_t> cols;
  bool use_grade = false;
  if (options.grade_effect) {
    for (size_t i = 1; i < N; ++i) {
      if (panel[i].grade != panel[0].grade) {
        use_grade = true;
        break;
      }
    }
    if (use_grade) {
      fit.fixed_effects.push_back("grade");
    } else {
      fit.warnings.push_back("grade is constant; dropped from the fixed effects");
    }
  }
  for (const auto& name : covariates) {
    auto idx = panel.covariate_index(name);
    if (!idx) fail(ErrorKind::validation, "covariate '" + name + "' is not present in the panel");
    cols.push_back(*idx);
    fit.fixed_effects.push_back(name);
  }
  const Eigen::Index P = static_cast<Eigen::Index>(fit.fixed_effects.size());
  auto row_of = [&](size_t i, Eigen::Ref<Eigen::VectorXd> x) {
    const auto& o = panel[i];
    x[0] = 1.0;
    x[1] = o.treatment;
    Eigen::Index j = 2;
    if (use_grade) x[j++] = o.grade;
    for (size_t c : cols) x[j++] = panel.covariate(i, c);
  };

  // Per-cluster sufficient statistics.
  Eigen::MatrixXd XtX = Eigen::MatrixXd::Zero(P, P);
  Eigen::VectorXd Xty = Eigen::VectorXd::Zero(P);
  Eigen::MatrixXd sx = Eigen::MatrixXd::Zero(P, C);  // X_c' 1
  Eigen::VectorXd sy = Eigen::VectorXd::Zero(C);
  std::vector<int> nc(C, 0);
  Eigen::VectorXd x(P);
  for (size_t i = 0; i < N; ++i) {
    row_of(i, x);
    const int c = panel[i].cluster;
    XtX.selfadjointView<Eigen::Lower>().rankUpdate(x);
    Xty += x * panel[i].outcome;
    sx.col(c) += x;
    sy[c] += panel[i].outcome;
    ++nc[c];
  }
  XtX.triangularView<Eigen::StrictlyUpper>() = XtX.transpose();

  // Full-rank check on the column-scaled cross-product.
  {
    Eigen::VectorXd d = XtX.diagonal().cwiseSqrt();
    if ((d.array() <= 0).any()) fail(ErrorKind::degenerate, "fixed-effect design has an all-zero column");
    Eigen::MatrixXd R = d.cwiseInverse().asDiagonal() * XtX * d.cwiseInverse().asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 1e-10 * es.eigenvalues().maxCoeff()) {
      fail(ErrorKind::degenerate, "fixed-effect design is rank deficient");
    }
  }

  // OLS residual cluster means for the between mean square.
  const Eigen::VectorXd beta_ols = XtX.ldlt().solve(Xty);
  Eigen::VectorXd resid_sum(C);
  for (int c = 0; c < C; ++c) resid_sum[c] = sy[c] - sx.col(c).dot(beta_ols);

  // Within regression on cluster-demeaned columns that vary within clusters.
  std::vector<Eigen::Index> within_cols;
  for (Eigen::Index j = 2; j < P; ++j) within_cols.push_back(j);
  const Eigen::Index Kw = static_cast<Eigen::Index>(within_cols.size());
  Eigen::MatrixXd WtW = Eigen::MatrixXd::Zero(Kw, Kw);
  Eigen::VectorXd Wty = Eigen::VectorXd::Zero(Kw);
  double yy_within = 0.0;
  {
    Eigen::VectorXd w(Kw);
    for (size_t i = 0; i < N; ++i) {
      row_of(i, x);
      const int c = panel[i].cluster;
      for (Eigen::Index a = 0; a < Kw; ++a) w[a] = x[within_cols[a]] - sx(within_cols[a], c) / nc[c];
      const double yd = panel[i].outcome - sy[c] / nc[c];
      WtW.selfadjointView<Eigen::Lower>().rankUpdate(w);
      Wty += w * yd;
      yy_within += yd * yd;
    }
    WtW.triangularView<Eigen::StrictlyUpper>() = WtW.transpose();
  }
  // Drop within columns with no within-cluster variation.
  Eigen::Index kw_eff = 0;
  double sse_within = yy_within;
  if (Kw > 0) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index a = 0; a < Kw; ++a) {
      if (WtW(a, a) > 1e-12 * (1.0 + XtX(within_cols[a], within_cols[a]))) keep.push_back(a);
    }
    kw_eff = static_cast<Eigen::Index>(keep.size());
    if (kw_eff > 0) {
      Eigen::MatrixXd A(kw_eff, kw_eff);
      Eigen::VectorXd b(kw_eff);
      for (Eigen::Index r = 0; r < kw_eff; ++r) {
        b[r] = Wty[keep[r]];
        for (Eigen::Index s = 0; s < kw_eff; ++s) A(r, s) = WtW(keep[r], keep[s]);
      }
      const Eigen::VectorXd g = A.ldlt().solve(b);
      sse_within = yy_within - b.dot(g);
    }
  }
  const double df_within = static_cast<double>(N) - C - kw_eff;
  double s2e = 0.0;
  double s2m = 0.0;
  if (df_within <= 0) {
    fit.warnings.push_back("no within-cluster replication; intraclass correlation is "
                           "unidentifiable, returning the OLS fit");
  } else {
    s2e = std::max(0.0, sse_within) / df_within;
    double ssb = 0.0, sum_n2 = 0.0;
    for (int c = 0; c < C; ++c) {
      ssb += resid_sum[c] * resid_sum[c] / nc[c];
      sum_n2 += static_cast<double>(nc[c]) * nc[c];
    }
    const double kb = 2.0;
    if (C > kb) {
      const double msb = ssb / (C - kb);
      const double n0 = (N - sum_n2 / N) / (C - 1);
      const double raw = (msb - s2e) / n0;
      if (raw < 0) {
        fit.warnings.push_back("negative between-cluster moment estimate floored to 0");
      }
      s2m = std::max(0.0, raw);
    } else {
      fit.warnings.push_back("too few clusters for the between mean square; cluster variance set to 0");
    }
  }
  fit.components.sigma2_eps = s2e;
  fit.components.sigma2_mu = s2m;
  fit.components.icc = s2e + s2m > 0 ? s2m / (s2e + s2m) : 0.0;

  // GLS with W_c = (I - gamma_c J) / s2e; the 1/s2e factor is applied only
  // to the model-based variance.
  const double rho = s2e > 0 ? s2m / s2e : 0.0;
  std::vector<double> gamma(C);
  Eigen::MatrixXd XtWX = XtX;
  Eigen::VectorXd XtWy = Xty;
  for (int c = 0; c < C; ++c) {
    gamma[c] = rho / (1.0 + nc[c] * rho);
    if (gamma[c] == 0.0) continue;
    XtWX.noalias() -= gamma[c] * sx.col(c) * sx.col(c).transpose();
    XtWy -= gamma[c] * sy[c] * sx.col(c);
  }
  const Eigen::MatrixXd bread = XtWX.inverse();
  const Eigen::VectorXd beta = bread * XtWy;
  fit.tau_hat = beta[1];
  const double scale = s2e > 0 ? s2e : [&] {
    // OLS residual variance when no components are available.
    double sse = 0.0;
    for (size_t i = 0; i < N; ++i) {
      row_of(i, x);
      const double e = panel[i].outcome - x.dot(beta);
      sse += e * e;
    }
    return sse / std::max<double>(1.0, static_cast<double>(N) - P);
  }();
  fit.se_model = std::sqrt(scale * bread(1, 1));

  // CR1: scores X_c' W_c e_c = X_c'e_c - gamma_c s_xc (1'e_c).
  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(P, C);
  Eigen::VectorXd esum = Eigen::VectorXd::Zero(C);
  for (size_t i = 0; i < N; ++i) {
    row_of(i, x);
    const int c = panel[i].cluster;
    const double e = panel[i].outcome - x.dot(beta);
    scores.col(c) += x * e;
    esum[c] += e;
  }
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(P, P);
  for (int c = 0; c < C; ++c) {
    Eigen::VectorXd u = scores.col(c) - gamma[c] * esum[c] * sx.col(c);
    meat.selfadjointView<Eigen::Lower>().rankUpdate(u);
  }
  meat.triangularView<Eigen::StrictlyUpper>() = meat.transpose();
  const Eigen::MatrixXd V = bread * meat * bread * (static_cast<double>(C) / (C - 1));
  fit.se_cr = std::sqrt(std::max(0.0, V(1, 1)));
  fit.df = C - 2;
  return fit;
}

}  // namespace pwrd
