#pragma once

#include <Eigen/Dense>
#include <vector>

#include "cacemix/errors.hpp"

namespace cacemix::glm {

// Probabilities are clamped to [kProbFloor, 1 - kProbFloor] before entering
// any log-likelihood, so E-steps never see -inf.
inline constexpr double kProbFloor = 1e-12;

inline double clamp_prob(double p) {
  if (p < kProbFloor) return kProbFloor;
  if (p > 1.0 - kProbFloor) return 1.0 - kProbFloor;
  return p;
}

/// 1/(1+exp(-t)), numerically stable and clamped away from exact 0/1.
inline double expit(double t) {
  double p;
  if (t >= 0.0) {
    double e = std::exp(-t);
    p = 1.0 / (1.0 + e);
  } else {
    double e = std::exp(t);
    p = e / (1.0 + e);
  }
  return clamp_prob(p);
}

/// Max-subtracted softmax; output is nonnegative and sums to 1.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// Row-wise softmax of an n x K logit matrix.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

/// Log-density of Normal(mu, sigma2) at y. DomainError if sigma2 <= 0.
double gaussian_loglik(double y, double mu, double sigma2);

struct SolverConfig {
  int max_iters = 100;
  double tol = 1e-8;                  // relative objective change + scaled gradient
  double condition_threshold = 1e12;  // ridge fallback trigger
  int max_step_halvings = 20;
};

struct FitResult {
  Eigen::MatrixXd coefficients;  // p x 1, or p x (K-1) with the last category pinned at 0
  bool converged = false;
  int iterations = 0;
  double final_objective = 0.0;  // log-likelihood; weighted SSE for least squares
  std::vector<double> objective_history;
};

/// Weighted Bernoulli log-likelihood maximized by damped Newton (IRLS).
/// The objective never decreases across accepted steps.
FitResult fit_weighted_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& w, const SolverConfig& cfg = {},
                                const Eigen::VectorXd* warm_start = nullptr);

/// Multinomial logistic regression on soft targets (rows sum to 1),
/// reference-coded: the last category's coefficients are fixed at 0.
FitResult fit_weighted_multinomial(const Eigen::MatrixXd& X, const Eigen::MatrixXd& targets,
                                   const SolverConfig& cfg = {},
                                   const Eigen::MatrixXd* warm_start = nullptr);

/// Weighted normal equations (X' W X) b = X' W y, with ridge fallback.
FitResult fit_weighted_least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& w);

}  // namespace cacemix::glm
