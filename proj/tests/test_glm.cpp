#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "cacemix/glm.hpp"
#include "cacemix/rng.hpp"
#include "oracles.hpp"

using namespace cacemix;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("expit basics") {
  CHECK(glm::expit(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  double big = glm::expit(50.0);
  CHECK(big < 1.0);
  CHECK(1.0 - big <= 1e-12);
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    double t = rng.uniform(-20.0, 20.0);
    CHECK(std::abs(glm::expit(t) + glm::expit(-t) - 1.0) <= 1e-15);
  }
  // monotone
  double prev = -1.0;
  for (double t = -30.0; t <= 30.0; t += 0.25) {
    double v = glm::expit(t);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("softmax basics") {
  VectorXd zero = VectorXd::Zero(4);
  VectorXd s = glm::softmax(zero);
  for (int i = 0; i < 4; ++i) CHECK(s[i] == doctest::Approx(0.25).epsilon(1e-14));

  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    VectorXd l(3);
    for (int i = 0; i < 3; ++i) l[i] = rng.uniform(-5, 5);
    double c = rng.uniform(-20, 20);
    VectorXd shifted = l.array() + c;
    VectorXd a = glm::softmax(l), b = glm::softmax(shifted);
    CHECK((a - b).lpNorm<Eigen::Infinity>() <= 1e-14);
  }

  VectorXd l(4);
  l << std::log(2.0), 0.0, 0.0, 0.0;
  VectorXd p = glm::softmax(l);
  CHECK(p[0] == doctest::Approx(0.4).epsilon(1e-14));
  for (int i = 1; i < 4; ++i) CHECK(p[i] == doctest::Approx(0.2).epsilon(1e-14));

  // sums to 1 for extreme logits
  Rng rng2(13);
  for (int rep = 0; rep < 100; ++rep) {
    VectorXd e(5);
    for (int i = 0; i < 5; ++i) e[i] = rng2.uniform(-700.0, 700.0);
    CHECK(std::abs(glm::softmax(e).sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("gaussian_loglik") {
  CHECK(glm::gaussian_loglik(0, 0, 1) == doctest::Approx(-0.9189385332046727).epsilon(1e-12));
  CHECK(glm::gaussian_loglik(2.0 + 0.7, 2.0, 3.0) ==
        doctest::Approx(glm::gaussian_loglik(2.0 - 0.7, 2.0, 3.0)).epsilon(1e-15));
  double expect = -std::log(2.0 * std::sqrt(2.0 * M_PI)) - 0.125;
  CHECK(glm::gaussian_loglik(1, 0, 4) == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS((void)glm::gaussian_loglik(0, 0, 0.0), Error);
}

namespace {

MatrixXd design_1d(const VectorXd& x) {
  MatrixXd X(x.size(), 2);
  X.col(0).setOnes();
  X.col(1) = x;
  return X;
}

}  // namespace

TEST_CASE("weighted logistic: intercept-only analytic MLE") {
  MatrixXd X = MatrixXd::Ones(6, 1);
  VectorXd y(6), w(6);
  y << 1, 0, 1, 1, 0, 1;
  w << 0.2, 0.5, 1.0, 0.3, 0.9, 0.6;
  double pbar = w.dot(y) / w.sum();
  auto fit = glm::fit_weighted_logistic(X, y, w);
  CHECK(fit.converged);
  CHECK(fit.coefficients(0, 0) == doctest::Approx(std::log(pbar / (1 - pbar))).epsilon(1e-8));
}

TEST_CASE("weighted logistic: equal weights match unweighted, rescale invariance") {
  Rng rng(21);
  int n = 200;
  VectorXd x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = rng.normal();
    y[i] = rng.bernoulli(glm::expit(0.5 + 1.2 * x[i]));
  }
  MatrixXd X = design_1d(x);
  auto unweighted = glm::fit_weighted_logistic(X, y, VectorXd::Ones(n));
  auto equal = glm::fit_weighted_logistic(X, y, VectorXd::Constant(n, 0.37));
  CHECK((unweighted.coefficients - equal.coefficients).lpNorm<Eigen::Infinity>() <= 1e-8);

  VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = rng.uniform(0.05, 1.0);
  auto a = glm::fit_weighted_logistic(X, y, w);
  auto b = glm::fit_weighted_logistic(X, y, (0.013 * w).eval());
  CHECK((a.coefficients - b.coefficients).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("weighted logistic: separable data stays finite") {
  VectorXd x(4), y(4);
  x << -2, -1, 1, 2;
  y << 0, 0, 1, 1;
  auto fit = glm::fit_weighted_logistic(design_1d(x), y, VectorXd::Ones(4));
  CHECK(fit.coefficients.allFinite());
  for (size_t i = 1; i < fit.objective_history.size(); ++i)
    CHECK(fit.objective_history[i] >= fit.objective_history[i - 1] - 1e-10);
}

TEST_CASE("weighted logistic: monotone objective + gradient at optimum") {
  Rng rng(33);
  int n = 500;
  MatrixXd X(n, 3);
  VectorXd y(n), w(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.normal();
    X(i, 2) = rng.uniform(-1, 1);
    y[i] = rng.bernoulli(glm::expit(-0.3 + 0.8 * X(i, 1) - 1.1 * X(i, 2)));
    w[i] = rng.uniform(0.0, 1.0);
  }
  auto fit = glm::fit_weighted_logistic(X, y, w);
  CHECK(fit.converged);
  for (size_t i = 1; i < fit.objective_history.size(); ++i)
    CHECK(fit.objective_history[i] >= fit.objective_history[i - 1]);

  VectorXd p(n);
  for (int i = 0; i < n; ++i) p[i] = glm::expit(X.row(i).dot(fit.coefficients.col(0)));
  VectorXd grad = X.transpose() * (w.cwiseProduct(y - p));
  double tol = 1e-8 * (1.0 + fit.coefficients.lpNorm<Eigen::Infinity>());
  CHECK(grad.lpNorm<Eigen::Infinity>() <= tol);
}

TEST_CASE("weighted logistic against grid-search oracle") {
  Rng rng(44);
  int n = 60;
  VectorXd x(n), y(n), w(n);
  for (int i = 0; i < n; ++i) {
    x[i] = rng.normal();
    y[i] = rng.bernoulli(glm::expit(0.4 - 0.9 * x[i]));
    w[i] = rng.uniform(0.2, 1.0);
  }
  MatrixXd X = design_1d(x);
  auto fit = glm::fit_weighted_logistic(X, y, w);
  VectorXd grid = oracles::logistic_grid_mle(X, y, w);
  CHECK((fit.coefficients.col(0) - grid).lpNorm<Eigen::Infinity>() <= 1e-3);
}

TEST_CASE("weighted logistic input errors") {
  MatrixXd X = MatrixXd::Ones(3, 1);
  VectorXd y(3), w(3);
  y << 0, 1, 0;
  w << 1, 1, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS((void)glm::fit_weighted_logistic(X, y, w), Error);
  w << 0, 0, 0;
  CHECK_THROWS_AS((void)glm::fit_weighted_logistic(X, y, w), Error);
}

TEST_CASE("multinomial: uniform targets give zero coefficients") {
  MatrixXd X = MatrixXd::Ones(40, 1);
  MatrixXd H = MatrixXd::Constant(40, 4, 0.25);
  auto fit = glm::fit_weighted_multinomial(X, H);
  CHECK(fit.coefficients.lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("multinomial K=2 reproduces logistic") {
  Rng rng(55);
  int n = 300;
  VectorXd x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = rng.normal();
    y[i] = rng.bernoulli(glm::expit(0.3 + 0.7 * x[i]));
  }
  MatrixXd X = design_1d(x);
  MatrixXd H(n, 2);
  H.col(0) = y;
  H.col(1) = 1.0 - y.array();
  auto multi = glm::fit_weighted_multinomial(X, H);
  auto logit = glm::fit_weighted_logistic(X, y, VectorXd::Ones(n));
  CHECK((multi.coefficients.col(0) - logit.coefficients.col(0)).lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("multinomial recovers planted coefficients from exact soft targets") {
  Rng rng(66);
  int n = 50000, p = 3, K = 4;
  MatrixXd X(n, p);
  MatrixXd delta(p, K - 1);
  delta << 0.5, -0.3, 0.1,
           1.0, 0.4, -0.8,
          -0.6, 0.9, 0.2;
  MatrixXd H(n, K);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.normal();
    X(i, 2) = rng.uniform(-2, 2);
    Eigen::VectorXd logits(K);
    logits.head(K - 1) = (X.row(i) * delta).transpose();
    logits[K - 1] = 0.0;
    H.row(i) = glm::softmax(logits).transpose();
  }
  auto fit = glm::fit_weighted_multinomial(X, H);
  CHECK((fit.coefficients - delta).lpNorm<Eigen::Infinity>() <= 0.05);
}

TEST_CASE("multinomial objective is monotone") {
  Rng rng(77);
  int n = 200;
  MatrixXd X(n, 2);
  MatrixXd H(n, 3);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.normal();
    VectorXd u(3);
    for (int k = 0; k < 3; ++k) u[k] = rng.uniform(0.01, 1.0);
    H.row(i) = (u / u.sum()).transpose();
  }
  auto fit = glm::fit_weighted_multinomial(X, H);
  for (size_t i = 1; i < fit.objective_history.size(); ++i)
    CHECK(fit.objective_history[i] >= fit.objective_history[i - 1]);
}

TEST_CASE("weighted least squares: exact line") {
  VectorXd x(5);
  x << -2, -1, 0, 1, 2;
  VectorXd y = (2.0 * x.array() + 1.0).matrix();
  auto fit = glm::fit_weighted_least_squares(design_1d(x), y, VectorXd::Ones(5));
  CHECK(fit.coefficients(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(fit.coefficients(1, 0) == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("weighted least squares: zero weights mask rows") {
  Rng rng(88);
  int n = 30;
  VectorXd x(n), y(n), w(n);
  for (int i = 0; i < n; ++i) {
    x[i] = rng.normal();
    y[i] = 1.0 + 0.5 * x[i] + 0.3 * rng.normal();
    w[i] = i < n / 2 ? 1.0 : 0.0;
  }
  MatrixXd X = design_1d(x);
  auto full = glm::fit_weighted_least_squares(X, y, w);
  auto sub = glm::fit_weighted_least_squares(X.topRows(n / 2), y.head(n / 2),
                                             VectorXd::Ones(n / 2));
  CHECK((full.coefficients - sub.coefficients).lpNorm<Eigen::Infinity>() <= 1e-10);
}

TEST_CASE("weighted least squares vs normal-equation oracle, residual orthogonality") {
  Rng rng(99);
  int n = 120, p = 5;
  MatrixXd X(n, p);
  VectorXd y(n), w(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    for (int j = 1; j < p; ++j) X(i, j) = rng.normal();
    y[i] = rng.normal() * 2.0 + X(i, 1) - 0.5 * X(i, 3);
    w[i] = rng.uniform(0.01, 1.0);
  }
  auto fit = glm::fit_weighted_least_squares(X, y, w);
  VectorXd oracle = oracles::wls_normal_equations(X, y, w);
  CHECK((fit.coefficients.col(0) - oracle).lpNorm<Eigen::Infinity>() <= 1e-8);

  VectorXd resid = y - X * fit.coefficients.col(0);
  VectorXd orth = X.transpose() * (w.cwiseProduct(resid));
  CHECK(orth.lpNorm<Eigen::Infinity>() <= 1e-8 * (1.0 + y.lpNorm<Eigen::Infinity>()));
}

TEST_CASE("singular system: ridge rescues duplicates, null design raises") {
  MatrixXd X(4, 2);
  X << 1, 1, 1, 1, 1, 1, 1, 1;  // duplicated columns
  VectorXd y(4), w = VectorXd::Ones(4);
  y << 0, 1, 2, 3;
  CHECK_NOTHROW((void)glm::fit_weighted_least_squares(X, y, w));
  MatrixXd Z = MatrixXd::Zero(4, 2);
  CHECK_THROWS_AS((void)glm::fit_weighted_least_squares(Z, y, w), Error);
}
