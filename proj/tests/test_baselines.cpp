#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "cacemix/baselines.hpp"
#include "cacemix/rng.hpp"

using namespace cacemix;
using Eigen::VectorXd;

TEST_CASE("wald: perfect compliance reduces to the outcome-mean difference") {
  Rng rng(2);
  int n = 500;
  VectorXd z(n), t(n), y(n);
  double s1 = 0, s0 = 0;
  int n1 = 0, n0 = 0;
  for (int i = 0; i < n; ++i) {
    z[i] = rng.bernoulli(0.5);
    t[i] = z[i];
    y[i] = rng.uniform(0, 1) + 0.3 * z[i];
    if (z[i] == 1.0) {
      s1 += y[i];
      ++n1;
    } else {
      s0 += y[i];
      ++n0;
    }
  }
  CHECK(wald_estimator(z, t, y) == doctest::Approx(s1 / n1 - s0 / n0).epsilon(1e-12));
}

TEST_CASE("wald: four-row hand computation") {
  VectorXd z(4), t(4), y(4);
  z << 1, 1, 0, 0;
  t << 1, 0, 0, 0;
  y << 1, 0, 0, 0;
  CHECK(wald_estimator(z, t, y) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("wald error paths") {
  VectorXd z(4), t(4), y(4);
  z << 1, 1, 0, 0;
  t << 1, 0, 1, 0;  // same compliance rate in both arms
  y << 1, 0, 1, 0;
  CHECK_THROWS_AS((void)wald_estimator(z, t, y), Error);

  VectorXd z1 = VectorXd::Ones(4);
  CHECK_THROWS_AS((void)wald_estimator(z1, t, y), Error);
}

TEST_CASE("matching with one group equals wald to 1e-12") {
  Rng rng(7);
  for (int rep = 0; rep < 200; ++rep) {
    int n = 30 + int(rng.below(50));
    VectorXd z(n), t(n), y(n), eta(n);
    bool ok = false;
    while (!ok) {
      int c1 = 0, c0 = 0;
      for (int i = 0; i < n; ++i) {
        z[i] = rng.bernoulli(0.5);
        t[i] = rng.bernoulli(z[i] == 1.0 ? 0.8 : 0.2);
        y[i] = rng.uniform(-1, 1) + 0.5 * t[i];
        eta[i] = rng.uniform(0.1, 0.9);
        (z[i] == 1.0 ? c1 : c0)++;
      }
      double t1 = 0, t0 = 0;
      for (int i = 0; i < n; ++i) (z[i] == 1.0 ? t1 : t0) += t[i];
      ok = c1 > 0 && c0 > 0 && std::abs(t1 / c1 - t0 / c0) > 1e-6;
    }
    MatchingConfig cfg;
    cfg.n_groups = 1;
    double wald = wald_estimator(z, t, y);
    double matching = iv_matching_estimator(z, t, y, eta, cfg).estimate;
    CHECK(std::abs(wald - matching) <= 1e-12);
  }
}

TEST_CASE("constant eta collapses any group count to wald") {
  Rng rng(12);
  int n = 200;
  VectorXd z(n), t(n), y(n);
  for (int i = 0; i < n; ++i) {
    z[i] = rng.bernoulli(0.5);
    t[i] = rng.bernoulli(z[i] == 1.0 ? 0.9 : 0.1);
    y[i] = rng.uniform(0, 1) + t[i];
  }
  VectorXd eta = VectorXd::Constant(n, 0.5);
  MatchingConfig cfg;
  cfg.n_groups = 7;
  auto res = iv_matching_estimator(z, t, y, eta, cfg);
  CHECK(res.groups_used == 1);
  CHECK(std::abs(res.estimate - wald_estimator(z, t, y)) <= 1e-12);
}

TEST_CASE("two-group matching against a 12-row hand-computed oracle") {
  // rows 0..5: eta = 0.2 (group 0); rows 6..11: eta = 0.8 (group 1)
  VectorXd z(12), t(12), y(12), eta(12);
  z << 1, 1, 1, 0, 0, 0, 1, 1, 1, 0, 0, 0;
  t << 1, 1, 0, 0, 0, 1, 1, 1, 1, 0, 1, 0;
  y << 2, 3, 1, 0, 1, 2, 4, 5, 3, 1, 2, 0;
  for (int i = 0; i < 12; ++i) eta[i] = i < 6 ? 0.2 : 0.8;

  // by-hand group means
  // group 0: Z=1 rows {0,1,2}: ybar=2, tbar=2/3 ; Z=0 rows {3,4,5}: ybar=1, tbar=1/3
  // group 1: Z=1 rows {6,7,8}: ybar=4, tbar=1   ; Z=0 rows {9,10,11}: ybar=1, tbar=1/3
  // equal group sizes: num = ((2-1) + (4-1))/2 = 2, den = ((1/3) + (2/3))/2 = 0.5
  MatchingConfig cfg;
  cfg.n_groups = 2;
  auto res = iv_matching_estimator(z, t, y, eta, cfg);
  CHECK(res.groups_used == 2);
  CHECK(res.estimate == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("groups missing an arm are dropped; all dropped raises") {
  VectorXd z(8), t(8), y(8), eta(8);
  // low-eta group has only Z=1 rows -> dropped; high group is balanced
  z << 1, 1, 1, 1, 1, 0, 1, 0;
  t << 1, 1, 1, 1, 1, 0, 1, 0;
  y << 1, 1, 1, 1, 1, 0, 1, 0;
  for (int i = 0; i < 8; ++i) eta[i] = i < 4 ? 0.1 : 0.9;
  MatchingConfig cfg;
  cfg.n_groups = 2;
  auto res = iv_matching_estimator(z, t, y, eta, cfg);
  CHECK(res.groups_dropped == 1);
  CHECK(res.groups_used == 1);

  VectorXd all_ones = VectorXd::Ones(8);
  CHECK_THROWS_AS((void)iv_matching_estimator(all_ones, t, y, eta, cfg), Error);
}

TEST_CASE("min_group_size drops small cells") {
  VectorXd z(6), t(6), y(6), eta(6);
  z << 1, 0, 1, 0, 1, 0;
  t << 1, 0, 1, 0, 1, 1;
  y << 1, 0, 2, 1, 3, 0;
  for (int i = 0; i < 6; ++i) eta[i] = i < 2 ? 0.1 : 0.9;
  MatchingConfig cfg;
  cfg.n_groups = 3;
  cfg.min_group_size = 2;  // every group has 1 row per arm
  CHECK_THROWS_AS((void)iv_matching_estimator(z, t, y, eta, cfg), Error);
}
