#include <cmath>
#include <random>

#include "doctest.h"
#include "pwrd/error.hpp"
#include "pwrd/weights.hpp"

using namespace pwrd;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Eigen::MatrixXd random_spd(std::mt19937_64& rng, int G) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd A(G, G);
  for (int i = 0; i < G; ++i)
    for (int j = 0; j < G; ++j) A(i, j) = z(rng);
  return A * A.transpose() + 0.05 * Eigen::MatrixXd::Identity(G, G);
}

}  // namespace

TEST_CASE("identity covariance gives weights proportional to p0") {
  auto w = pwrd_weights(Eigen::MatrixXd::Identity(3, 3), vec({0.2, 0.3, 0.5}));
  CHECK(w.omega[0] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(w.omega[1] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(w.omega[2] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w.clipped_groups.empty());
  CHECK_FALSE(w.used_fallback);
}

TEST_CASE("diagonal covariance") {
  Eigen::MatrixXd S = vec({1, 4}).asDiagonal();
  auto w = pwrd_weights(S, vec({0.5, 0.5}));
  CHECK(std::abs(w.omega[0] - 0.8) <= 1e-12);
  CHECK(std::abs(w.omega[1] - 0.2) <= 1e-12);
}

TEST_CASE("correlated case clips the first group") {
  Eigen::MatrixXd S(2, 2);
  S << 1, 0.9, 0.9, 1;
  auto w = pwrd_weights(S, vec({0.1, 1.0}));
  CHECK(w.omega[0] == 0.0);
  CHECK(w.omega[1] == 1.0);
  REQUIRE(w.clipped_groups.size() == 1);
  CHECK(w.clipped_groups[0] == 0);
  CHECK(w.kkt_passed);
}

TEST_CASE("weights errors") {
  CHECK_THROWS_AS(pwrd_weights(Eigen::MatrixXd::Identity(2, 2), vec({0, 0})), Error);
  Eigen::MatrixXd singular(2, 2);
  singular << 1, 1, 1, 1;
  try {
    pwrd_weights(singular, vec({0.5, 0.5}));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numerical);
  }
  PwrdOptions ridge;
  ridge.ridge = true;
  auto w = pwrd_weights(singular, vec({0.5, 0.5}), ridge);
  CHECK(w.ridge == doctest::Approx(1e-8));
  CHECK(w.omega.sum() == doctest::Approx(1.0));
  CHECK_THROWS_AS(pwrd_weights(Eigen::MatrixXd::Identity(3, 3), vec({0.5, 0.5})), Error);
}

TEST_CASE("clipped formula that fails optimality falls back to the constrained optimum") {
  // Three groups where clipping one entry of Sigma^{-1}p leaves the other
  // two off their reduced optimum.
  Eigen::MatrixXd S(3, 3);
  S << 1.0, 0.6, 0.3, 0.6, 1.0, 0.5, 0.3, 0.5, 1.0;
  auto p = vec({0.1, 0.9, 0.6});
  Eigen::VectorXd x = S.ldlt().solve(p);
  REQUIRE(x.minCoeff() < 0);
  auto w = pwrd_weights(S, p);
  CHECK(kkt_violation(S, p, w.omega) <= 1e-8);
  CHECK(w.omega.minCoeff() >= 0);
  CHECK(w.omega.sum() == doctest::Approx(1.0).epsilon(1e-12));
  if (w.used_fallback) CHECK_FALSE(w.kkt_passed);
  CHECK(test_slope(w.omega, p, S) >= test_slope(w.clip_formula_omega, p, S) - 1e-12);
}

TEST_CASE("weight invariants over random instances") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.01, 1.0);
  for (int t = 0; t < 500; ++t) {
    const int G = 2 + t % 4;
    Eigen::MatrixXd S = random_spd(rng, G);
    Eigen::VectorXd p(G);
    for (int g = 0; g < G; ++g) p[g] = unif(rng);
    auto w = pwrd_weights(S, p);
    CHECK(w.omega.minCoeff() >= 0);
    CHECK(std::abs(w.omega.sum() - 1.0) <= 1e-12);
    // Scale invariance.
    auto w2 = pwrd_weights(7.5 * S, p);
    auto w3 = pwrd_weights(S, 0.3 * p);
    CHECK((w.omega - w2.omega).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((w.omega - w3.omega).cwiseAbs().maxCoeff() <= 1e-12);
    // Beats flat and random simplex points.
    const double h = test_slope(w.omega, p, S);
    CHECK(h >= test_slope(Eigen::VectorXd::Constant(G, 1.0 / G), p, S) - 1e-12);
    Eigen::VectorXd r(G);
    for (int g = 0; g < G; ++g) r[g] = -std::log(unif(rng));
    r /= r.sum();
    CHECK(h >= test_slope(r, p, S) - 1e-12);
    // Clipped groups cannot gain weight.
    for (int g : w.clipped_groups) {
      if (w.omega[g] > 0) continue;
      Eigen::VectorXd bumped = w.omega;
      bumped[g] = 1e-4;
      bumped /= bumped.sum();
      CHECK(test_slope(bumped, p, S) < h);
    }
  }
}

TEST_CASE("slopes and relative efficiency") {
  auto p = vec({0.5, 0.5});
  CHECK(test_slope(p, p, Eigen::MatrixXd::Identity(2, 2)) == doctest::Approx(std::sqrt(0.5)));
  Eigen::MatrixXd S = vec({1, 4}).asDiagonal();
  auto pw = pwrd_weights(S, p).omega;
  auto flat = vec({0.5, 0.5});
  CHECK(pitman_relative_efficiency(pw, flat, p, S) == doctest::Approx(1.5625).epsilon(1e-12));
  CHECK(pitman_relative_efficiency(flat, flat, p, S) == 1.0);
  const double re = pitman_relative_efficiency(pw, flat, p, S);
  const double h1 = test_slope(pw, p, S), h2 = test_slope(flat, p, S);
  CHECK(std::abs(re - (h1 / h2) * (h1 / h2)) <= 1e-12);
  // Homogeneity in p0.
  CHECK(test_slope(pw, 3.0 * p, S) == doctest::Approx(3.0 * h1));
  CHECK(pitman_relative_efficiency(pw, flat, 3.0 * p, S) == doctest::Approx(re).epsilon(1e-12));
  CHECK_THROWS_AS(test_slope(flat, p, Eigen::MatrixXd::Zero(2, 2)), Error);
  CHECK_THROWS_AS(pitman_relative_efficiency(pw, vec({0, 0}), p, S), Error);
}

TEST_CASE("flat weights") {
  auto w = flat_weights(std::vector<int>{10, 30});
  CHECK(w.omega[0] == 0.25);
  CHECK(w.omega[1] == 0.75);
  auto e = flat_weights(std::vector<int>{5, 5, 5, 5});
  for (int g = 0; g < 4; ++g) CHECK(e.omega[g] == 0.25);
}

TEST_CASE("aggregate test") {
  Eigen::MatrixXd V = vec({0.04, 0.09}).asDiagonal();
  SUBCASE("estimate equal to null") {
    auto t = aggregate_test(vec({1, 2}), V, 20, vec({0.5, 0.5}), vec({1, 2}), Alternative::two_sided);
    CHECK(t.t_stat == 0.0);
    CHECK(t.p_value == doctest::Approx(1.0));
  }
  SUBCASE("single group reduction") {
    auto t = aggregate_test(vec({0.6, -3}), V, 30, vec({1, 0}));
    CHECK(t.t_stat == doctest::Approx(0.6 / 0.2).epsilon(1e-12));
    CHECK(t.p_value > 0);
    CHECK(t.p_value < 0.01);
    CHECK(std::abs(t.t_stat - (t.estimate - t.null_value) / t.se) <= 1e-12);
  }
  SUBCASE("invalid inputs") {
    CHECK_THROWS_AS(aggregate_test(vec({1, 2}), V, 0, vec({1, 0})), Error);
    CHECK_THROWS_AS(aggregate_test(vec({1, 2}), Eigen::MatrixXd::Zero(2, 2), 10, vec({1, 0})), Error);
    CHECK_THROWS_AS(aggregate_test(vec({1, 2}), V, 10, vec({1})), Error);
  }
}

TEST_CASE("external aggregation") {
  SUBCASE("single estimate is a z test") {
    Eigen::MatrixXd V(1, 1);
    V << 0.25;
    auto r = aggregate_external(vec({1.0}), V, vec({0.3}));
    CHECK(r.weights.omega[0] == 1.0);
    CHECK(r.test.t_stat == doctest::Approx(2.0));
    CHECK(r.test.p_value == doctest::Approx(0.5 * std::erfc(2.0 / std::sqrt(2.0))).epsilon(1e-10));
  }
  SUBCASE("identity covariance, uniform p0 averages") {
    auto r = aggregate_external(vec({1, 2, 6}), Eigen::MatrixXd::Identity(3, 3), vec({0.4, 0.4, 0.4}));
    CHECK(r.test.estimate == doctest::Approx(3.0).epsilon(1e-12));
  }
}
