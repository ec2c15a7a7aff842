#include "pwrd/group_effects.hpp"

#include <cmath>

#include "pwrd/covariance.hpp"
#include "pwrd/error.hpp"

namespace pwrd {

std::string to_string(EffectMethod m) {
  return m == EffectMethod::diffmeans ? "difference-in-means" : "peters-belson";
}

EffectMethod effect_method_from_string(const std::string& s) {
  if (s == "difference-in-means" || s == "diffmeans") return EffectMethod::diffmeans;
  if (s == "peters-belson" || s == "pb") return EffectMethod::peters_belson;
  fail(ErrorKind::validation, "unknown effect estimator '" + s + "'");
}

int GroupEffects::position_of(int g) const {
  for (size_t i = 0; i < groups.size(); ++i) {
    if (groups[i] == g) return static_cast<int>(i);
  }
  return -1;
}

namespace {

GroupEffects skeleton(const PanelDataset& panel, EffectMethod method) {
  GroupEffects out;
  out.method = method;
  for (const auto& info : panel.groups()) {
    if (info.degenerate()) {
      out.excluded.push_back({info.g, info.n_treated == 0 ? "no treated observations"
                                                          : "no control observations"});
      continue;
    }
    out.groups.push_back(info.g);
    out.keys.push_back(info.key);
    out.n.push_back(info.n);
    out.n_treated.push_back(info.n_treated);
    out.n_control.push_back(info.n_control);
  }
  if (out.groups.empty()) {
    fail(ErrorKind::degenerate, "no group has both treated and control observations");
  }
  return out;
}

}  // namespace

GroupEffects estimate_effects_diffmeans(const PanelDataset& panel) {
  GroupEffects out = skeleton(panel, EffectMethod::diffmeans);
  const size_t G = panel.groups().size();
  std::vector<double> sum_t(G, 0.0), sum_c(G, 0.0);
  auto group_of = panel.group_of();
  for (size_t i = 0; i < panel.size(); ++i) {
    const auto& o = panel[i];
    (o.treatment ? sum_t : sum_c)[group_of[i]] += o.outcome;
  }
  out.delta_hat.resize(out.size());
  for (size_t k = 0; k < out.size(); ++k) {
    const int g = out.groups[k];
    out.delta_hat[k] = sum_t[g] / out.n_treated[k] - sum_c[g] / out.n_control[k];
  }
  return out;
}

GroupEffects estimate_effects_peters_belson(const PanelDataset& panel,
                                            const std::vector<std::string>& covariates) {
  GroupEffects base = skeleton(panel, EffectMethod::peters_belson);
  std::vector<size_t> cols;
  for (const auto& name : covariates) {
    auto idx = panel.covariate_index(name);
    if (!idx) fail(ErrorKind::validation, "covariate '" + name + "' is not present in the panel");
    cols.push_back(*idx);
  }
  const size_t k = cols.size() + 1;
  const size_t G = panel.groups().size();

  // Row lists per group and arm.
  std::vector<std::vector<size_t>> treated(G), control(G);
  auto group_of = panel.group_of();
  for (size_t i = 0; i < panel.size(); ++i) {
    (panel[i].treatment ? treated : control)[group_of[i]].push_back(i);
  }
  auto design_row = [&](size_t i, auto&& row) {
    row[0] = 1.0;
    for (size_t j = 0; j < cols.size(); ++j) row[j + 1] = panel.covariate(i, cols[j]);
  };

  GroupEffects out;
  out.method = EffectMethod::peters_belson;
  out.covariates = covariates;
  out.covariate_columns = cols;
  out.excluded = base.excluded;
  std::vector<double> deltas;
  for (size_t pos = 0; pos < base.size(); ++pos) {
    const int g = base.groups[pos];
    const auto& rc = control[g];
    const auto& rt = treated[g];
    if (rc.size() < k) {
      out.excluded.push_back({g, "fewer control rows (" + std::to_string(rc.size()) +
                                     ") than predictors plus one (" + std::to_string(k) + ")"});
      continue;
    }
    Eigen::MatrixXd X(rc.size(), k);
    Eigen::VectorXd y(rc.size());
    for (size_t r = 0; r < rc.size(); ++r) {
      design_row(rc[r], X.row(r));
      y[r] = panel[rc[r]].outcome;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (static_cast<size_t>(qr.rank()) < k) {
      const auto& key = panel.groups()[g].key;
      fail(ErrorKind::degenerate,
           "rank-deficient control design in group " + std::to_string(g) + " (cohort " +
               std::to_string(key.cohort) + ", entry grade " + std::to_string(key.entry_grade) +
               ", year " + std::to_string(key.year) + ")");
    }
    ControlFit fit;
    fit.beta = qr.solve(y);
    fit.xtx_inv = (X.transpose() * X).inverse();
    fit.treated_mean_x = Eigen::VectorXd::Zero(k);
    Eigen::RowVectorXd row(k);
    double resid_sum = 0.0;
    for (size_t i : rt) {
      design_row(i, row);
      fit.treated_mean_x += row.transpose();
      resid_sum += panel[i].outcome - row.dot(fit.beta);
    }
    fit.treated_mean_x /= static_cast<double>(rt.size());
    deltas.push_back(resid_sum / static_cast<double>(rt.size()));
    out.fits.push_back(std::move(fit));
    out.groups.push_back(g);
    out.keys.push_back(base.keys[pos]);
    out.n.push_back(base.n[pos]);
    out.n_treated.push_back(base.n_treated[pos]);
    out.n_control.push_back(base.n_control[pos]);
  }
  if (out.groups.empty()) {
    fail(ErrorKind::degenerate, "no group has enough control rows for the covariate model");
  }
  out.delta_hat = Eigen::Map<Eigen::VectorXd>(deltas.data(), deltas.size());
  return out;
}

GroupEffects estimate_effects(const PanelDataset& panel, EffectMethod method,
                              const std::vector<std::string>& covariates) {
  if (method == EffectMethod::diffmeans) {
    if (!covariates.empty()) {
      fail(ErrorKind::validation, "covariates require the peters-belson estimator");
    }
    return estimate_effects_diffmeans(panel);
  }
  return estimate_effects_peters_belson(panel, covariates);
}

TestInProportions estimate_p0(const PanelDataset& panel) {
  if (!panel.has_tested_in()) {
    fail(ErrorKind::degenerate,
         "no test-in signal: panel has no tested_in flags and no threshold rule");
  }
  const size_t G = panel.groups().size();
  std::vector<int> flagged(G, 0);
  auto group_of = panel.group_of();
  for (size_t i = 0; i < panel.size(); ++i) {
    const auto& o = panel[i];
    if (o.treatment == 0 && o.tested_in) ++flagged[group_of[i]];
  }
  TestInProportions out;
  std::vector<double> p;
  for (const auto& info : panel.groups()) {
    if (info.n_control == 0) {
      out.excluded.push_back({info.g, "no control observations"});
      continue;
    }
    out.groups.push_back(info.g);
    out.counts.push_back(info.n_control);
    p.push_back(static_cast<double>(flagged[info.g]) / info.n_control);
  }
  out.p_hat = Eigen::Map<Eigen::VectorXd>(p.data(), p.size());
  return out;
}

Eigen::VectorXd align_p0(const TestInProportions& p0, const GroupEffects& effects) {
  Eigen::VectorXd out(effects.size());
  size_t j = 0;
  for (size_t k = 0; k < effects.size(); ++k) {
    while (j < p0.groups.size() && p0.groups[j] < effects.groups[k]) ++j;
    if (j == p0.groups.size() || p0.groups[j] != effects.groups[k]) {
      fail(ErrorKind::degenerate,
           "group " + std::to_string(effects.groups[k]) + " has no test-in proportion");
    }
    out[k] = p0.p_hat[j];
  }
  return out;
}

PanelDataset exit_subset(const PanelDataset& panel) {
  std::vector<int> last_year(panel.n_units(), 0);
  std::vector<size_t> last_row(panel.n_units(), 0);
  for (size_t i = 0; i < panel.size(); ++i) {
    const auto& o = panel[i];
    if (o.year > last_year[o.unit]) {
      last_year[o.unit] = o.year;
      last_row[o.unit] = i;
    }
  }
  std::vector<Observation> obs;
  std::vector<double> cov;
  const size_t K = panel.n_covariates();
  for (int u = 0; u < panel.n_units(); ++u) {
    if (last_year[u] == 0) continue;
    Observation o = panel[last_row[u]];
    // Pool every exit row into a single cell.
    o.cohort = 0;
    o.grade = 1;
    o.year = 1;
    obs.push_back(o);
    for (size_t k = 0; k < K; ++k) cov.push_back(panel.covariate(last_row[u], k));
  }
  return PanelDataset(std::move(obs), panel.labels(), panel.has_tested_in(), panel.covariate_names(),
                      std::move(cov));
}

ExitEstimate exit_observation_estimate(const PanelDataset& panel, CovVariant variant,
                                       EffectMethod method,
                                       const std::vector<std::string>& covariates) {
  PanelDataset exit = exit_subset(panel);
  const auto& g = exit.groups();
  if (g.size() != 1 || g[0].degenerate()) {
    fail(ErrorKind::degenerate, "exit rule selects no rows for one treatment arm");
  }
  GroupEffects effects = estimate_effects(exit, method, covariates);
  CovarianceOptions opts;
  opts.variant = variant;
  CovarianceEstimate cov = cluster_covariance(exit, effects, opts);
  ExitEstimate out;
  out.estimate = effects.delta_hat[0];
  out.se = std::sqrt(cov.sigma_hat(0, 0));
  out.df = cov.df;
  out.n_rows = g[0].n;
  out.n_treated = g[0].n_treated;
  out.n_control = g[0].n_control;
  out.n_clusters = exit.n_clusters();
  return out;
}

}  // namespace pwrd
