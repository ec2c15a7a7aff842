#include "pwrd/covariance.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "pwrd/error.hpp"

namespace pwrd {

std::string to_string(CovVariant v) { return v == CovVariant::cr0 ? "CR0" : "CR2"; }

CovVariant cov_variant_from_string(const std::string& s) {
  if (s == "cr0" || s == "CR0") return CovVariant::cr0;
  if (s == "cr2" || s == "CR2") return CovVariant::cr2;
  fail(ErrorKind::validation, "unknown covariance variant '" + s + "' (expected cr0 or cr2)");
}

std::string to_string(ResidualSource r) {
  return r == ResidualSource::both_arms ? "both-arms" : "control-only";
}

ResidualSource residual_source_from_string(const std::string& s) {
  if (s == "both-arms") return ResidualSource::both_arms;
  if (s == "control-only") return ResidualSource::control_only;
  fail(ErrorKind::validation, "unknown residual source '" + s + "' (expected both-arms or control-only)");
}

std::string to_string(DfRule r) {
  return r == DfRule::clusters_minus_2 ? "clusters-2" : "satterthwaite";
}

DfRule df_rule_from_string(const std::string& s) {
  if (s == "clusters-2") return DfRule::clusters_minus_2;
  if (s == "satterthwaite") return DfRule::satterthwaite;
  fail(ErrorKind::validation,
       "unknown df rule '" + s + "' (expected clusters-2 or satterthwaite)");
}

namespace {

constexpr double kEigenFloor = 1e-12;

double cr2_scale(int m, int n) {
  return 1.0 / std::sqrt(std::max(1.0 - static_cast<double>(m) / n, kEigenFloor));
}

// Symmetric inverse square root of (I - B) with eigenvalue floor.
Eigen::MatrixXd inv_sqrt_complement(const Eigen::MatrixXd& B) {
  const Eigen::Index m = B.rows();
  Eigen::MatrixXd I_minus = Eigen::MatrixXd::Identity(m, m) - B;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(I_minus);
  Eigen::VectorXd d = es.eigenvalues().cwiseMax(kEigenFloor).cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

CovarianceEstimate cluster_covariance(const PanelDataset& panel, const GroupEffects& effects,
                                      const CovarianceOptions& options) {
  const int C = panel.n_clusters();
  if (C < 2) {
    fail(ErrorKind::degenerate, "cluster covariance needs at least 2 clusters");
  }
  const size_t G = effects.size();
  const bool pb = effects.method == EffectMethod::peters_belson;
  const size_t ngroups = panel.groups().size();
  std::vector<int> pos_of(ngroups, -1);
  for (size_t k = 0; k < G; ++k) {
    const int g = effects.groups[k];
    if (g < 0 || static_cast<size_t>(g) >= ngroups ||
        panel.groups()[g].n_treated != effects.n_treated[k] ||
        panel.groups()[g].n_control != effects.n_control[k]) {
      fail(ErrorKind::validation, "group effects do not belong to this panel");
    }
    pos_of[g] = static_cast<int>(k);
  }
  const size_t K = pb ? effects.covariate_columns.size() + 1 : 1;

  auto design_row = [&](size_t i, auto&& row) {
    row[0] = 1.0;
    for (size_t j = 1; j < K; ++j) row[j] = panel.covariate(i, effects.covariate_columns[j - 1]);
  };

  // Residual for each row: arm-mean residual, or for Peters-Belson the
  // control-fit residual (control rows) and treated residual about delta_hat.
  const auto group_of = panel.group_of();
  std::vector<double> arm_sum(2 * G, 0.0);
  if (!pb) {
    for (size_t i = 0; i < panel.size(); ++i) {
      const int k = pos_of[group_of[i]];
      if (k >= 0) arm_sum[2 * k + panel[i].treatment] += panel[i].outcome;
    }
  }
  auto arm_n = [&](size_t k, int arm) { return arm ? effects.n_treated[k] : effects.n_control[k]; };

  std::vector<double> resid(panel.size(), 0.0);
  Eigen::RowVectorXd xrow(K);
  for (size_t i = 0; i < panel.size(); ++i) {
    const int k = pos_of[group_of[i]];
    if (k < 0) continue;
    const auto& o = panel[i];
    if (!pb) {
      resid[i] = o.outcome - arm_sum[2 * k + o.treatment] / arm_n(k, o.treatment);
    } else {
      design_row(i, xrow);
      const double fitted = xrow.dot(effects.fits[k].beta);
      resid[i] = o.treatment ? o.outcome - fitted - effects.delta_hat[k] : o.outcome - fitted;
    }
  }

  // Cell (k, arm) x cluster accumulators.
  const size_t cells = 2 * G;
  std::vector<double> cell_sum(cells * C, 0.0);
  std::vector<int> cell_cnt(cells * C, 0);
  std::vector<double> cell_ss(cells, 0.0);
  std::vector<std::vector<size_t>> pb_rows;  // control rows per (k, cluster)
  if (pb && K > 1) pb_rows.resize(G * C);
  for (size_t i = 0; i < panel.size(); ++i) {
    const int k = pos_of[group_of[i]];
    if (k < 0) continue;
    const auto& o = panel[i];
    const size_t cell = 2 * k + o.treatment;
    cell_sum[cell * C + o.cluster] += resid[i];
    ++cell_cnt[cell * C + o.cluster];
    cell_ss[cell] += resid[i] * resid[i];
    if (!pb_rows.empty() && o.treatment == 0) pb_rows[k * C + o.cluster].push_back(i);
  }

  CovarianceEstimate out;
  out.variant = options.variant;
  out.residuals = options.residuals;
  out.n_clusters = C;
  for (int c = 0; c < C; ++c) {
    (panel.cluster_treatment(c) ? out.n_treated_clusters : out.n_control_clusters) += 1;
  }
  out.df = C - 2;
  out.scores = Eigen::MatrixXd::Zero(C, G);
  // Adjusted control residual sums for the control-only variant.
  Eigen::MatrixXd control_sums = Eigen::MatrixXd::Zero(C, G);
  const bool cr2 = options.variant == CovVariant::cr2;
  if (options.keep_df_kernels) out.df_kernels.assign(G, Eigen::MatrixXd::Zero(C, C));

  for (size_t k = 0; k < G; ++k) {
    for (int arm = 0; arm < 2; ++arm) {
      const size_t cell = 2 * k + arm;
      const int n = arm_n(k, arm);
      const double sign = arm ? 1.0 : -1.0;
      const bool general = pb && arm == 0 && K > 1;
      const double s2 = cell_ss[cell] / std::max(1, n - static_cast<int>(general ? K : 1));
      if (!general) {
        // Intercept-only cell: the leverage block is (m/n) J, whose
        // constant eigenvector carries the whole residual sum.
        const double a = pb && arm == 0 ? -effects.fits[k].treated_mean_x[0] / n : sign / n;
        std::vector<int> members;
        for (int c = 0; c < C; ++c) {
          const int m = cell_cnt[cell * C + c];
          if (m == 0) continue;
          members.push_back(c);
          const double kappa = cr2 ? cr2_scale(m, n) : 1.0;
          const double adj = kappa * cell_sum[cell * C + c];
          out.scores(c, k) += a * adj;
          if (arm == 0) control_sums(c, k) = adj;
        }
        if (options.keep_df_kernels) {
          auto& Kg = out.df_kernels[k];
          for (int c : members) {
            const int mc = cell_cnt[cell * C + c];
            const double kc = cr2 ? cr2_scale(mc, n) : 1.0;
            for (int d : members) {
              const int md = cell_cnt[cell * C + d];
              const double kd = cr2 ? cr2_scale(md, n) : 1.0;
              double v = -a * a * kc * kd * mc * md / n;
              if (c == d) v += a * a * kc * kc * mc;
              Kg(c, d) += s2 * v;
            }
          }
        }
        continue;
      }
      // Control cell of a covariate-adjusted fit.
      const auto& fit = effects.fits[k];
      const Eigen::VectorXd h = fit.xtx_inv * fit.treated_mean_x;
      std::vector<int> members;
      std::vector<Eigen::VectorXd> a_ell;  // A_c l_c per member
      std::vector<Eigen::VectorXd> v;      // X_c' A_c l_c per member
      for (int c = 0; c < C; ++c) {
        const auto& rows = pb_rows[k * C + c];
        if (rows.empty()) continue;
        const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
        Eigen::MatrixXd Xc(m, K);
        Eigen::VectorXd ec(m);
        for (Eigen::Index r = 0; r < m; ++r) {
          design_row(rows[r], Xc.row(r));
          ec[r] = resid[rows[r]];
        }
        const Eigen::VectorXd ell = -(Xc * h);
        Eigen::VectorXd adj_e = ec;
        Eigen::VectorXd al = ell;
        if (cr2) {
          const Eigen::MatrixXd A = inv_sqrt_complement(Xc * fit.xtx_inv * Xc.transpose());
          adj_e = A * ec;
          al = A * ell;
        }
        out.scores(c, k) += ell.dot(adj_e);
        control_sums(c, k) = adj_e.sum();
        if (options.keep_df_kernels) {
          members.push_back(c);
          v.push_back(Xc.transpose() * al);
          a_ell.push_back(std::move(al));
        }
      }
      if (options.keep_df_kernels) {
        auto& Kg = out.df_kernels[k];
        for (size_t x = 0; x < members.size(); ++x) {
          for (size_t y = 0; y < members.size(); ++y) {
            double val = -v[x].dot(fit.xtx_inv * v[y]);
            if (x == y) val += a_ell[x].squaredNorm();
            Kg(members[x], members[y]) += s2 * val;
          }
        }
      }
    }
  }

  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(G, G);
  if (options.residuals == ResidualSource::both_arms) {
    for (int c = 0; c < C; ++c) {
      S.selfadjointView<Eigen::Lower>().rankUpdate(out.scores.row(c).transpose());
    }
  } else {
    if (out.n_control_clusters == 0) {
      fail(ErrorKind::degenerate, "control-only covariance needs control clusters");
    }
    const double ratio = static_cast<double>(out.n_treated_clusters) / out.n_control_clusters;
    Eigen::VectorXd w(G);
    for (int c = 0; c < C; ++c) {
      if (panel.cluster_treatment(c)) continue;
      S.selfadjointView<Eigen::Lower>().rankUpdate(out.scores.row(c).transpose());
      for (size_t k = 0; k < G; ++k) w[k] = control_sums(c, k) / effects.n_treated[k];
      S.selfadjointView<Eigen::Lower>().rankUpdate(w, ratio);
    }
  }
  S.triangularView<Eigen::StrictlyUpper>() = S.transpose();
  out.sigma_hat = std::move(S);
  return out;
}

double small_sample_df(const CovarianceEstimate& cov, const Eigen::VectorXd& omega) {
  const double fallback = cov.n_clusters - 2;
  if (cov.n_treated_clusters < 2 || cov.n_control_clusters < 2) return fallback;
  if (cov.df_kernels.size() != static_cast<size_t>(omega.size())) {
    fail(ErrorKind::validation,
         "Satterthwaite df needs a covariance estimate computed with df kernels for every group");
  }
  Eigen::MatrixXd Kw = Eigen::MatrixXd::Zero(cov.n_clusters, cov.n_clusters);
  for (Eigen::Index g = 0; g < omega.size(); ++g) {
    if (omega[g] != 0.0) Kw += omega[g] * omega[g] * cov.df_kernels[g];
  }
  const double tr = Kw.trace();
  const double fro2 = Kw.squaredNorm();
  const double df = tr * tr / fro2;
  return std::isfinite(df) && df > 0 ? df : fallback;
}

}  // namespace pwrd
