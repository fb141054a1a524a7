#include <doctest.h>

#include <cmath>
#include <limits>

#include "powerpost/core.hpp"

using namespace powerpost;

TEST_CASE("state vector invariants") {
  CHECK_THROWS_AS(StateVector(Eigen::VectorXd()), DimensionError);
  CHECK_THROWS_AS(StateVector(Eigen::VectorXd::Zero(6), GridShape{2, 2}), DimensionError);
  Eigen::VectorXd bad = Eigen::VectorXd::Zero(3);
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(StateVector{bad}, DomainError);
  bad[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(Observation{bad}, DomainError);
  CHECK_THROWS_AS(Observation(Eigen::VectorXd()), DimensionError);

  const StateVector x(Eigen::VectorXd::LinSpaced(6, 0, 5), GridShape{2, 3});
  CHECK(x.size() == 6);
  CHECK(x.grid()->width == 3);
  CHECK(x[4] == 4.0);
}

TEST_CASE("power params") {
  CHECK_THROWS_AS(PowerParams(0.0, 0.0), ConfigError);
  CHECK_THROWS_AS(PowerParams(-1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(PowerParams(1.0, -0.5), ConfigError);
  CHECK_THROWS_AS(PowerParams(std::nan(""), 1.0), ConfigError);
  CHECK_NOTHROW(PowerParams(0.0, 1.0));
  CHECK_NOTHROW(PowerParams(1.0, 0.0));
}

TEST_CASE("mix_scores examples") {
  const Eigen::Vector2d post(1, 0), prior(0, 1);
  CHECK(mix_scores(Eigen::VectorXd(post), Eigen::VectorXd(prior), PowerParams(1, 1)) == Eigen::VectorXd(post));
  CHECK(mix_scores(Eigen::VectorXd(post), Eigen::VectorXd(prior), PowerParams(0, 1)) == Eigen::VectorXd(prior));
  CHECK(mix_scores(Eigen::VectorXd(post), Eigen::VectorXd(prior), PowerParams(2, 1)) == Eigen::Vector2d(2, -1));
  CHECK_THROWS_AS(mix_scores(Eigen::VectorXd(Eigen::VectorXd::Zero(2)), Eigen::VectorXd(Eigen::VectorXd::Zero(3)), PowerParams(1, 1)), DimensionError);
  CHECK_THROWS_AS(mix_scores(Eigen::MatrixXd(Eigen::MatrixXd::Zero(2, 4)), Eigen::MatrixXd(Eigen::MatrixXd::Zero(2, 3)), PowerParams(1, 1)),
                  DimensionError);
}

TEST_CASE("mix_scores properties on random vectors") {
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    const Eigen::VectorXd s = rng.normal_vector(5) * 10.0;
    const Eigen::VectorXd p = rng.normal_vector(5) * 10.0;
    const double alpha = 3.0 * rng.uniform() + 0.01;
    const double lambda = 3.0 * rng.uniform();
    const double a = rng.normal();
    CHECK(mix_scores(s, p, PowerParams(1, 1)) == s);
    CHECK(mix_scores(s, p, PowerParams(0, alpha)) == alpha * p);
    const Eigen::VectorXd lhs = mix_scores(Eigen::VectorXd(a * s), Eigen::VectorXd(a * p), PowerParams(lambda, alpha));
    const Eigen::VectorXd rhs = a * mix_scores(s, p, PowerParams(lambda, alpha));
    CHECK((lhs - rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
    const Eigen::MatrixXd batched = mix_scores(Eigen::MatrixXd(s), Eigen::MatrixXd(p), PowerParams(lambda, alpha));
    CHECK(Eigen::VectorXd(batched.col(0)) == mix_scores(s, p, PowerParams(lambda, alpha)));
  }
}

TEST_CASE("schedule endpoints only") {
  const NoiseSchedule s = build_schedule(0.01, 10.0, 2, 7.0);
  REQUIRE(s.size() == 2);
  CHECK(s[0] == 10.0);
  CHECK(s[1] == 0.01);
}

TEST_CASE("schedule matches the spacing formula") {
  const double lo = 0.002, hi = 80.0, rho = 7.0;
  const std::size_t n = 18;
  const NoiseSchedule s = build_schedule(lo, hi, n, rho);
  REQUIRE(s.size() == n);
  CHECK(std::abs(s[0] - hi) <= 1e-12 * hi);
  CHECK(std::abs(s[n - 1] - lo) <= 1e-12 * lo);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    const double expect = std::pow(std::pow(hi, 1 / rho) + t * (std::pow(lo, 1 / rho) - std::pow(hi, 1 / rho)), rho);
    CHECK(s[i] == doctest::Approx(expect).epsilon(1e-12));
    if (i > 0) CHECK(s[i] < s[i - 1]);
  }
}

TEST_CASE("schedule rejects invalid configurations") {
  CHECK_THROWS_AS(build_schedule(1.0, 1.0 + 1e-15, 10, 7.0), ConfigError);
  CHECK_THROWS_AS(build_schedule(1.0, 1.0, 10, 7.0), ConfigError);
  CHECK_THROWS_AS(build_schedule(2.0, 1.0, 10, 7.0), ConfigError);
  CHECK_THROWS_AS(build_schedule(0.0, 1.0, 10, 7.0), ConfigError);
  CHECK_THROWS_AS(build_schedule(-1.0, 1.0, 10, 7.0), ConfigError);
  CHECK_THROWS_AS(build_schedule(0.1, 1.0, 1, 7.0), ConfigError);
  CHECK_THROWS_AS(build_schedule(0.1, 1.0, 10, 0.0), ConfigError);
  CHECK_THROWS_AS(build_schedule(0.1, std::numeric_limits<double>::infinity(), 10, 7.0), ConfigError);
}

TEST_CASE("stream derivation") {
  CHECK(derive_stream(1, 0) != derive_stream(1, 1));
  CHECK(derive_stream(1, 0) != derive_stream(2, 0));
  CHECK(derive_stream(5, 9) == derive_stream(5, 9));
  Rng a(derive_stream(3, 4)), b(derive_stream(3, 4));
  for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
}

TEST_CASE("rng moments") {
  Rng rng(11);
  const int n = 200000;
  double sum = 0, sq = 0, usum = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
    usum += rng.uniform();
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.01);
  CHECK(std::abs(usum / n - 0.5) < 0.005);
}
