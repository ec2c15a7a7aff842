#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "pwrd/covariance.hpp"
#include "pwrd/error.hpp"
#include "pwrd/sim.hpp"
#include "pwrd/weights.hpp"

using namespace pwrd;
using testutil::Row;

namespace {

void check_symmetric_psd(const Eigen::MatrixXd& S) {
  CHECK((S - S.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * S.cwiseAbs().maxCoeff());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10 * S.trace());
  CHECK((S.diagonal().array() >= 0).all());
}

CovarianceEstimate cov_of(const PanelDataset& p, CovVariant v, bool kernels = false) {
  CovarianceOptions o;
  o.variant = v;
  o.keep_df_kernels = kernels;
  return cluster_covariance(p, estimate_effects_diffmeans(p), o);
}

}  // namespace

TEST_CASE("singleton clusters reduce CR0 to the two-sample formula") {
  std::vector<Row> rows;
  std::vector<double> yt = {1, 3, 5, 7}, yc = {0, 2, 4, 6};
  int u = 0;
  for (double y : yt) rows.push_back({u, u, 1, 1, 0, 1, y, false}), ++u;
  for (double y : yc) rows.push_back({u, u, 0, 1, 0, 1, y, false}), ++u;
  auto p = testutil::make_panel(rows);
  const double s2 = 5.0;  // population variance of {1,3,5,7}
  const double m = 4;
  auto c = cov_of(p, CovVariant::cr0);
  CHECK(c.sigma_hat(0, 0) == doctest::Approx(s2 * (1 / m + 1 / m)).epsilon(1e-13));
  // CR2 with singleton clusters is the unbiased two-sample variance.
  auto c2 = cov_of(p, CovVariant::cr2);
  CHECK(c2.sigma_hat(0, 0) == doctest::Approx(s2 * m / (m - 1) * (2 / m)).epsilon(1e-13));
}

TEST_CASE("duplicating rows within clusters keeps estimates and CR0") {
  auto p = generate_panel(Scenario::single_cohort(8, 3), 5);
  std::vector<Observation> obs(p.observations().begin(), p.observations().end());
  const size_t n = obs.size();
  for (size_t i = 0; i < n; ++i) {
    Observation o = obs[i];
    o.unit += p.n_units();
    obs.push_back(o);
  }
  PanelDataset q(std::move(obs), {}, true);
  auto ea = estimate_effects_diffmeans(p);
  auto eb = estimate_effects_diffmeans(q);
  for (Eigen::Index g = 0; g < ea.delta_hat.size(); ++g) {
    CHECK(ea.delta_hat[g] == doctest::Approx(eb.delta_hat[g]).epsilon(1e-13));
  }
  auto ca = cov_of(p, CovVariant::cr0);
  auto cb = cov_of(q, CovVariant::cr0);
  CHECK((ca.sigma_hat - cb.sigma_hat).cwiseAbs().maxCoeff() <= 1e-10 * ca.sigma_hat.cwiseAbs().maxCoeff());
}

TEST_CASE("symmetric and positive semidefinite across simulated panels") {
  Scenario s = Scenario::default_layout();
  for (int r = 0; r < 10; ++r) {
    auto p = generate_panel(s, r);
    check_symmetric_psd(cov_of(p, CovVariant::cr0).sigma_hat);
    check_symmetric_psd(cov_of(p, CovVariant::cr2).sigma_hat);
    CovarianceOptions o;
    o.residuals = ResidualSource::control_only;
    check_symmetric_psd(cluster_covariance(p, estimate_effects_diffmeans(p), o).sigma_hat);
  }
}

TEST_CASE("relabeling cluster identifiers leaves sigma bit-identical") {
  auto p = generate_panel(Scenario::single_cohort(10, 4), 2);
  PanelDataset::Labels labels;
  for (int c = 0; c < p.n_clusters(); ++c) labels.clusters.push_back("school-" + std::to_string(97 - c));
  std::vector<Observation> obs(p.observations().begin(), p.observations().end());
  PanelDataset q(std::move(obs), labels, true);
  CHECK(cov_of(p, CovVariant::cr2).sigma_hat == cov_of(q, CovVariant::cr2).sigma_hat);
}

TEST_CASE("peters-belson without covariates gives the same covariance") {
  auto p = generate_panel(Scenario::default_layout(), 7);
  auto a = cluster_covariance(p, estimate_effects_diffmeans(p));
  auto b = cluster_covariance(p, estimate_effects_peters_belson(p, {}));
  CHECK((a.sigma_hat - b.sigma_hat).cwiseAbs().maxCoeff() <= 1e-9 * a.sigma_hat.cwiseAbs().maxCoeff());
}

TEST_CASE("covariate-adjusted covariance is PSD and shrinks with a prognostic covariate") {
  auto p = generate_panel(Scenario::single_cohort(12, 6), 1);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  std::vector<double> x(p.size());
  std::vector<Observation> obs(p.observations().begin(), p.observations().end());
  for (size_t i = 0; i < obs.size(); ++i) {
    x[i] = z(rng);
    obs[i].outcome += 10 * x[i];
  }
  PanelDataset q(std::move(obs), {}, true, {"x"}, x);
  auto dm = cluster_covariance(q, estimate_effects_diffmeans(q));
  auto pb = cluster_covariance(q, estimate_effects_peters_belson(q, {"x"}));
  check_symmetric_psd(pb.sigma_hat);
  CHECK(pb.sigma_hat.trace() < dm.sigma_hat.trace());
}

TEST_CASE("Monte Carlo covariance oracle at 200 clusters") {
  Scenario s = Scenario::single_cohort(200, 10);
  const int R = 500;
  Eigen::MatrixXd mean_cov = Eigen::MatrixXd::Zero(4, 4);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(4);
  Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(4, 4);
  for (int r = 0; r < R; ++r) {
    auto p = generate_panel(s, r);
    auto e = estimate_effects_diffmeans(p);
    mean_cov += cluster_covariance(p, e).sigma_hat / R;
    sum += e.delta_hat;
    outer += e.delta_hat * e.delta_hat.transpose();
  }
  Eigen::MatrixXd emp = (outer - sum * sum.transpose() / R) / (R - 1);
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      CHECK(std::abs(emp(a, b) - mean_cov(a, b)) <= 0.15 * std::abs(mean_cov(a, b)));
    }
  }
}

TEST_CASE("Satterthwaite df") {
  SUBCASE("balanced single group is close to clusters minus two") {
    Scenario s = Scenario::single_cohort(20, 8);
    s.n_years = 1;
    auto p = generate_panel(s, 0);
    auto c = cov_of(p, CovVariant::cr2, true);
    Eigen::VectorXd w = Eigen::VectorXd::Ones(1);
    const double df = small_sample_df(c, w);
    CHECK(df == doctest::Approx(18.0).epsilon(0.10));
  }
  SUBCASE("two clusters fall back to zero and the test refuses") {
    auto p = testutil::make_panel({{0, 0, 1, 1, 0, 1, 1, 0},
                                   {1, 0, 1, 1, 0, 1, 2, 0},
                                   {2, 1, 0, 1, 0, 1, 0, 0},
                                   {3, 1, 0, 1, 0, 1, 3, 0}});
    auto e = estimate_effects_diffmeans(p);
    CovarianceOptions o;
    o.keep_df_kernels = true;
    auto c = cluster_covariance(p, e, o);
    Eigen::VectorXd w = Eigen::VectorXd::Ones(1);
    const double df = small_sample_df(c, w);
    CHECK(df == 0.0);
    CHECK_THROWS_AS(aggregate_test(e.delta_hat, c.sigma_hat, df, w), Error);
  }
  SUBCASE("default panel lies strictly between 2 and 52") {
    Scenario s = Scenario::default_layout();
    auto p = generate_panel(s, 3);
    auto c = cov_of(p, CovVariant::cr2, true);
    auto e = estimate_effects_diffmeans(p);
    auto w = pwrd_weights(c.sigma_hat, align_p0(estimate_p0(p), e));
    const double df = small_sample_df(c, w.omega);
    CHECK(df > 2);
    CHECK(df < 52);
    const double df_flat = small_sample_df(c, flat_weights(e).omega);
    CHECK(df_flat > 2);
    CHECK(df_flat < 52);
  }
  SUBCASE("requires kernels") {
    auto p = generate_panel(Scenario::single_cohort(6, 2), 0);
    auto c = cov_of(p, CovVariant::cr2, false);
    CHECK_THROWS_AS(small_sample_df(c, Eigen::VectorXd::Constant(4, 0.25)), Error);
  }
}

TEST_CASE("fewer than two clusters is an error") {
  auto p = testutil::make_panel({{0, 0, 1, 1, 0, 1, 1, 0}, {1, 0, 1, 1, 0, 1, 2, 0}});
  CHECK_THROWS_AS(cluster_covariance(p, GroupEffects{}), Error);
}
