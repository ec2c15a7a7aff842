#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "pwrd/error.hpp"
#include "pwrd/group_effects.hpp"
#include "pwrd/sim.hpp"

using namespace pwrd;
using testutil::Row;

namespace {

PanelDataset with_covariate(const PanelDataset& p, const std::vector<double>& x) {
  std::vector<Observation> obs(p.observations().begin(), p.observations().end());
  return PanelDataset(std::move(obs), p.labels(), p.has_tested_in(), {"x"}, x);
}

}  // namespace

TEST_CASE("difference in means by hand") {
  auto p = testutil::make_panel({{0, 0, 1, 1, 0, 1, 5, 0},
                                 {1, 0, 1, 1, 0, 1, 7, 0},
                                 {2, 1, 0, 1, 0, 1, 4, 0},
                                 {3, 1, 0, 1, 0, 1, 6, 0}});
  auto e = estimate_effects_diffmeans(p);
  REQUIRE(e.size() == 1);
  CHECK(e.delta_hat[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("identical arms give exactly zero") {
  auto p = testutil::make_panel({{0, 0, 1, 1, 0, 1, 3.25, 0},
                                 {1, 0, 1, 1, 0, 1, 8.5, 0},
                                 {2, 1, 0, 1, 0, 1, 8.5, 0},
                                 {3, 1, 0, 1, 0, 1, 3.25, 0}});
  CHECK(estimate_effects_diffmeans(p).delta_hat[0] == 0.0);
}

TEST_CASE("degenerate groups are excluded and listed") {
  auto p = testutil::make_panel({{0, 0, 1, 1, 0, 1, 1, 0},
                                 {1, 1, 0, 1, 0, 1, 2, 0},
                                 {2, 0, 1, 2, 0, 1, 3, 0}});
  auto e = estimate_effects_diffmeans(p);
  CHECK(e.size() == 1);
  REQUIRE(e.excluded.size() == 1);
  CHECK(e.excluded[0].g == 1);
}

TEST_CASE("translation and scale equivariance") {
  auto p = generate_panel(Scenario::single_cohort(10, 5), 3);
  auto base = estimate_effects_diffmeans(p);
  std::vector<double> shifted(p.size()), scaled(p.size());
  for (size_t i = 0; i < p.size(); ++i) {
    shifted[i] = p[i].outcome + 17.0;
    scaled[i] = p[i].outcome * 3.0;
  }
  auto es = estimate_effects_diffmeans(p.with_outcomes(shifted));
  auto ec = estimate_effects_diffmeans(p.with_outcomes(scaled));
  for (Eigen::Index g = 0; g < base.delta_hat.size(); ++g) {
    CHECK(es.delta_hat[g] == doctest::Approx(base.delta_hat[g]).epsilon(1e-9).scale(100));
    CHECK(ec.delta_hat[g] == doctest::Approx(3.0 * base.delta_hat[g]).epsilon(1e-12));
  }
}

TEST_CASE("peters-belson without covariates matches difference in means") {
  auto p = generate_panel(Scenario::default_layout(), 1);
  auto a = estimate_effects_diffmeans(p);
  auto b = estimate_effects_peters_belson(p, {});
  REQUIRE(a.size() == b.size());
  for (Eigen::Index g = 0; g < a.delta_hat.size(); ++g) {
    CHECK(std::abs(a.delta_hat[g] - b.delta_hat[g]) <= 1e-12 * (1.0 + std::abs(a.delta_hat[g])) * 100);
  }
}

TEST_CASE("peters-belson recovers a shifted line exactly") {
  std::vector<Row> rows;
  std::vector<double> x;
  for (int i = 0; i < 8; ++i) {
    const int treated = i % 2;
    const double xi = 0.5 * i;
    rows.push_back({i, treated, treated, 1, 0, 1, 3.0 + 1.5 * xi + (treated ? 2.0 : 0.0), false});
    x.push_back(xi);
  }
  auto p = with_covariate(testutil::make_panel(rows), x);
  auto e = estimate_effects_peters_belson(p, {"x"});
  CHECK(e.delta_hat[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("peters-belson errors") {
  SUBCASE("rank deficient control design") {
    std::vector<Row> rows;
    std::vector<double> x;
    for (int i = 0; i < 6; ++i) {
      rows.push_back({i, i % 2, i % 2, 1, 0, 1, double(i), false});
      x.push_back(i % 2 ? double(i) : 1.0);  // constant on controls
    }
    auto p = with_covariate(testutil::make_panel(rows), x);
    try {
      estimate_effects_peters_belson(p, {"x"});
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("group 0") != std::string::npos);
      CHECK(e.kind() == ErrorKind::degenerate);
    }
  }
  SUBCASE("too few control rows excludes the group") {
    std::vector<Row> rows = {{0, 0, 1, 1, 0, 1, 1, 0}, {1, 1, 0, 1, 0, 1, 2, 0},
                             {2, 0, 1, 2, 0, 1, 1, 0}, {3, 1, 0, 2, 0, 1, 2, 0},
                             {4, 1, 0, 2, 0, 1, 4, 0}};
    auto p = with_covariate(testutil::make_panel(rows), {0, 1, 0, 1, 2});
    auto e = estimate_effects_peters_belson(p, {"x"});
    CHECK(e.size() == 1);
    CHECK(e.excluded.size() == 1);
  }
}

TEST_CASE("peters-belson reduces variance with a prognostic covariate") {
  Scenario s = Scenario::single_cohort(20, 10);
  std::vector<double> dm, pb;
  for (int r = 0; r < 500; ++r) {
    auto p = generate_panel(s, r);
    std::mt19937_64 rng(1000 + r);
    std::normal_distribution<double> z;
    std::vector<double> x(p.size()), y(p.size());
    for (size_t i = 0; i < p.size(); ++i) {
      x[i] = z(rng);
      y[i] = p[i].outcome + 8.0 * x[i];
    }
    std::vector<Observation> obs(p.observations().begin(), p.observations().end());
    for (size_t i = 0; i < obs.size(); ++i) obs[i].outcome = y[i];
    PanelDataset q(std::move(obs), {}, true, {"x"}, x);
    dm.push_back(estimate_effects_diffmeans(q).delta_hat[0]);
    pb.push_back(estimate_effects_peters_belson(q, {"x"}).delta_hat[0]);
  }
  auto var = [](const std::vector<double>& v) {
    double m = 0, s = 0;
    for (double x : v) m += x;
    m /= v.size();
    for (double x : v) s += (x - m) * (x - m);
    return s / (v.size() - 1);
  };
  CHECK(var(pb) < var(dm));
}

TEST_CASE("test-in proportions") {
  auto p = testutil::make_panel({{0, 0, 0, 1, 0, 1, 1, 1},
                                 {1, 0, 0, 1, 0, 1, 1, 0},
                                 {2, 0, 0, 1, 0, 1, 1, 1},
                                 {3, 0, 0, 1, 0, 1, 1, 1},
                                 {4, 1, 1, 1, 0, 1, 1, 0}});
  auto p0 = estimate_p0(p);
  CHECK(p0.p_hat[0] == 0.75);
  CHECK(p0.counts[0] == 4);

  SUBCASE("all zero flags") {
    auto q = testutil::make_panel({{0, 0, 0, 1, 0, 1, 1, 0}, {1, 1, 1, 1, 0, 1, 1, 0}});
    CHECK(estimate_p0(q).p_hat[0] == 0.0);
  }
  SUBCASE("no flags at all") {
    auto q = testutil::make_panel({{0, 0, 0, 1, 0, 1, 1, 0}, {1, 1, 1, 1, 0, 1, 1, 0}}, false);
    CHECK_THROWS_AS(estimate_p0(q), Error);
  }
}

TEST_CASE("p0 ignores treated outcomes") {
  auto p = generate_panel(Scenario::default_layout(), 2);
  std::vector<double> y(p.size());
  for (size_t i = 0; i < p.size(); ++i) y[i] = p[i].treatment ? -p[i].outcome * 7 : p[i].outcome;
  auto a = estimate_p0(p);
  auto b = estimate_p0(p.with_outcomes(y));
  CHECK(a.p_hat == b.p_hat);
}

TEST_CASE("exit estimate") {
  SUBCASE("one row per unit equals pooled difference in means") {
    auto p = testutil::make_panel({{0, 0, 1, 1, 0, 1, 5, 0},
                                   {1, 1, 1, 2, 1, 1, 9, 0},
                                   {2, 2, 0, 1, 0, 1, 4, 0},
                                   {3, 3, 0, 2, 1, 1, 2, 0}});
    auto ex = exit_observation_estimate(p);
    CHECK(ex.estimate == doctest::Approx((5.0 + 9.0) / 2 - (4.0 + 2.0) / 2));
    CHECK(ex.n_rows == 4);
  }
  SUBCASE("cohort layout picks the final-year diagonal") {
    Scenario s = Scenario::default_layout();
    s.cohorts = {s.cohorts[0]};
    auto p = generate_panel(s, 0);
    auto sub = exit_subset(p);
    // Every cohort-1 unit leaves after grade 3.
    std::vector<double> diag, picked;
    for (size_t i = 0; i < p.size(); ++i) {
      if (p[i].grade == 3) diag.push_back(p[i].outcome);
    }
    for (size_t i = 0; i < sub.size(); ++i) picked.push_back(sub[i].outcome);
    std::sort(diag.begin(), diag.end());
    std::sort(picked.begin(), picked.end());
    CHECK(diag == picked);
    CHECK(static_cast<int>(sub.size()) == p.n_units());
    auto ex = exit_observation_estimate(p);
    CHECK(ex.se > 0);
    CHECK(ex.df == s.n_clusters - 2);
  }
  SUBCASE("one empty arm is an error") {
    auto p = testutil::make_panel({{0, 0, 1, 1, 0, 1, 5, 0}, {1, 1, 1, 1, 0, 1, 5, 0}});
    CHECK_THROWS_AS(exit_observation_estimate(p), Error);
  }
}

TEST_CASE("null simulation centers group effects at zero") {
  Scenario s = Scenario::single_cohort(20, 5);
  const int R = 2000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(4), sq = Eigen::VectorXd::Zero(4);
  for (int r = 0; r < R; ++r) {
    auto d = estimate_effects_diffmeans(generate_panel(s, r)).delta_hat;
    sum += d;
    sq += d.cwiseProduct(d);
  }
  for (int g = 0; g < 4; ++g) {
    const double mean = sum[g] / R;
    const double sd = std::sqrt(sq[g] / R - mean * mean);
    CHECK(std::abs(mean) < 4.0 * sd / std::sqrt(double(R)));
  }
}
