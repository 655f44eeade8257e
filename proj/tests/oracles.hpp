// Independent brute-force oracles for the test suites. These deliberately
// avoid the library's solver paths: dense Gauss-Jordan elimination, grid
// search, and a hand-rolled scalar EM.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace oracles {

// (X'WX)^-1 X'Wy via explicit Gauss-Jordan elimination with partial pivoting.
inline Eigen::VectorXd wls_normal_equations(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                            const Eigen::VectorXd& w) {
  const int p = int(X.cols());
  const int n = int(X.rows());
  std::vector<std::vector<double>> A(size_t(p), std::vector<double>(size_t(p) + 1, 0.0));
  for (int a = 0; a < p; ++a) {
    for (int b = 0; b < p; ++b) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += X(i, a) * w[i] * X(i, b);
      A[size_t(a)][size_t(b)] = s;
    }
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += X(i, a) * w[i] * y[i];
    A[size_t(a)][size_t(p)] = s;
  }
  for (int col = 0; col < p; ++col) {
    int pivot = col;
    for (int r = col + 1; r < p; ++r)
      if (std::abs(A[size_t(r)][size_t(col)]) > std::abs(A[size_t(pivot)][size_t(col)])) pivot = r;
    std::swap(A[size_t(col)], A[size_t(pivot)]);
    double d = A[size_t(col)][size_t(col)];
    if (d == 0.0) throw std::runtime_error("oracle: singular system");
    for (int c = col; c <= p; ++c) A[size_t(col)][size_t(c)] /= d;
    for (int r = 0; r < p; ++r) {
      if (r == col) continue;
      double f = A[size_t(r)][size_t(col)];
      for (int c = col; c <= p; ++c) A[size_t(r)][size_t(c)] -= f * A[size_t(col)][size_t(c)];
    }
  }
  Eigen::VectorXd out(p);
  for (int a = 0; a < p; ++a) out[a] = A[size_t(a)][size_t(p)];
  return out;
}

inline double logistic_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
  double ll = 0.0;
  for (int i = 0; i < X.rows(); ++i) {
    double eta = X.row(i).dot(beta);
    // log(1+exp(eta)) computed stably
    double lse = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
    ll += w[i] * (y[i] * eta - lse);
  }
  return ll;
}

// Coordinate-wise grid refinement of the weighted logistic MLE (tolerance ~1e-3
// per coordinate when refined enough). Only suitable for p <= 3.
inline Eigen::VectorXd logistic_grid_mle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                         const Eigen::VectorXd& w, double lo = -10.0,
                                         double hi = 10.0, int rounds = 24, int grid = 21) {
  const int p = int(X.cols());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd width = Eigen::VectorXd::Constant(p, hi - lo);
  beta.setConstant((hi + lo) / 2.0);
  for (int round = 0; round < rounds; ++round) {
    for (int j = 0; j < p; ++j) {
      double best = beta[j];
      double best_ll = logistic_loglik(X, y, w, beta);
      double half = width[j] / 2.0;
      for (int g = 0; g < grid; ++g) {
        double cand = beta[j] - half + width[j] * g / (grid - 1);
        Eigen::VectorXd b = beta;
        b[j] = cand;
        double ll = logistic_loglik(X, y, w, b);
        if (ll > best_ll) {
          best_ll = ll;
          best = cand;
        }
      }
      beta[j] = best;
    }
    width *= 0.25;
  }
  return beta;
}

struct TwoGaussianFit {
  double mu1 = 0.0, mu2 = 0.0, var1 = 1.0, var2 = 1.0;
  double loglik = 0.0;
};

// Scalar two-component EM with fixed mixing weight g per observation
// (intercept-only experts), written from scratch for cross-checking.
inline TwoGaussianFit two_gaussian_em(const std::vector<double>& y, double gate,
                                      double mu1_init, double mu2_init, int iters = 500) {
  TwoGaussianFit f;
  f.mu1 = mu1_init;
  f.mu2 = mu2_init;
  const size_t n = y.size();
  std::vector<double> h(n, 0.0);
  for (int it = 0; it < iters; ++it) {
    double ll = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double d1 = std::exp(-(y[i] - f.mu1) * (y[i] - f.mu1) / (2.0 * f.var1)) /
                  std::sqrt(2.0 * M_PI * f.var1);
      double d2 = std::exp(-(y[i] - f.mu2) * (y[i] - f.mu2) / (2.0 * f.var2)) /
                  std::sqrt(2.0 * M_PI * f.var2);
      double num = gate * d1;
      double den = gate * d1 + (1.0 - gate) * d2;
      h[i] = num / den;
      ll += std::log(den);
    }
    f.loglik = ll;
    double s1 = 0.0, s2 = 0.0, m1 = 0.0, m2 = 0.0;
    for (size_t i = 0; i < n; ++i) {
      s1 += h[i];
      s2 += 1.0 - h[i];
      m1 += h[i] * y[i];
      m2 += (1.0 - h[i]) * y[i];
    }
    f.mu1 = m1 / s1;
    f.mu2 = m2 / s2;
    double v1 = 0.0, v2 = 0.0;
    for (size_t i = 0; i < n; ++i) {
      v1 += h[i] * (y[i] - f.mu1) * (y[i] - f.mu1);
      v2 += (1.0 - h[i]) * (y[i] - f.mu2) * (y[i] - f.mu2);
    }
    f.var1 = v1 / s1;
    f.var2 = v2 / s2;
  }
  return f;
}

}  // namespace oracles
