#include "cacemix/glm.hpp"

#include <cmath>
#include <limits>

namespace cacemix::glm {

namespace {

bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

// LDLT solve with a condition-number check and a single ridge retry
// (ridge = 1e-8 * trace/cols). SingularSystem if the retry is still bad.
Eigen::MatrixXd solve_spd(Eigen::MatrixXd A, const Eigen::MatrixXd& rhs, double cond_threshold) {
  auto attempt = [&](const Eigen::MatrixXd& mat, Eigen::MatrixXd& out) -> bool {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(mat);
    if (ldlt.info() != Eigen::Success) return false;
    Eigen::VectorXd d = ldlt.vectorD();
    double dmax = d.maxCoeff();
    double dmin = d.minCoeff();
    if (!(dmax > 0.0) || dmin <= 0.0 || dmax / dmin > cond_threshold) return false;
    out = ldlt.solve(rhs);
    return out.allFinite();
  };

  double trace = A.trace();
  if (!(trace > 0.0) || !A.allFinite())
    raise(ErrorCode::SingularSystem, "weighted information matrix is degenerate");
  Eigen::MatrixXd sol;
  if (attempt(A, sol)) return sol;
  A.diagonal().array() += 1e-8 * trace / double(A.cols());
  if (attempt(A, sol)) return sol;
  raise(ErrorCode::SingularSystem, "weighted information matrix is numerically singular");
}

double weighted_bernoulli_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                 const Eigen::VectorXd& p) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (w[i] == 0.0) continue;
    double pc = clamp_prob(p[i]);
    ll += w[i] * (y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc));
  }
  return ll;
}

}  // namespace

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  Eigen::VectorXd out(logits.size());
  double m = logits.maxCoeff();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  out /= sum;
  return out;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double m = logits.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      double e = std::exp(logits(i, k) - m);
      out(i, k) = e;
      sum += e;
    }
    out.row(i) /= sum;
  }
  return out;
}

double gaussian_loglik(double y, double mu, double sigma2) {
  if (!(sigma2 > 0.0)) raise(ErrorCode::DomainError, "gaussian_loglik needs sigma2 > 0");
  double r = y - mu;
  return -0.5 * std::log(2.0 * M_PI * sigma2) - r * r / (2.0 * sigma2);
}

FitResult fit_weighted_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& w, const SolverConfig& cfg,
                                const Eigen::VectorXd* warm_start) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (y.size() != n || w.size() != n)
    raise(ErrorCode::DomainError, "fit_weighted_logistic: size mismatch");
  if (!all_finite(X) || !all_finite(y) || !all_finite(w))
    raise(ErrorCode::NonFinite, "fit_weighted_logistic: non-finite input");
  double wsum = w.sum();
  if (!(wsum > 0.0)) raise(ErrorCode::DegenerateData, "all weights are zero");

  // Normalize weights to mean 1: the argmax is unchanged and the fit becomes
  // exactly invariant to uniform weight rescaling.
  const double wscale = wsum / double(n);
  Eigen::VectorXd wn = w / wscale;

  FitResult res;
  Eigen::VectorXd beta = warm_start ? *warm_start : Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta = X * beta;
  Eigen::VectorXd prob(n);
  for (Eigen::Index i = 0; i < n; ++i) prob[i] = expit(eta[i]);
  double obj = weighted_bernoulli_loglik(y, wn, prob);
  res.objective_history.push_back(obj);

  bool converged = false;
  int iter = 0;
  for (; iter < cfg.max_iters; ++iter) {
    Eigen::VectorXd resid = wn.cwiseProduct(y - prob);
    Eigen::VectorXd grad = X.transpose() * resid;
    Eigen::VectorXd fisher_w = wn.array() * prob.array() * (1.0 - prob.array());
    Eigen::MatrixXd info = X.transpose() * fisher_w.asDiagonal() * X;
    Eigen::VectorXd dir = solve_spd(std::move(info), grad, cfg.condition_threshold);

    // step-halving: accept the first non-decreasing step
    double step = 1.0;
    Eigen::VectorXd beta_new;
    double obj_new = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    Eigen::VectorXd prob_new(n);
    for (int h = 0; h <= cfg.max_step_halvings; ++h) {
      beta_new = beta + step * dir;
      Eigen::VectorXd eta_new = X * beta_new;
      for (Eigen::Index i = 0; i < n; ++i) prob_new[i] = expit(eta_new[i]);
      obj_new = weighted_bernoulli_loglik(y, wn, prob_new);
      if (obj_new >= obj) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no ascent direction left at this precision

    double delta = obj_new - obj;
    beta = beta_new;
    prob = prob_new;
    obj = obj_new;
    res.objective_history.push_back(obj);

    Eigen::VectorXd grad_new = X.transpose() * (wn.cwiseProduct(y - prob));
    double gnorm = grad_new.lpNorm<Eigen::Infinity>();
    if (delta <= cfg.tol * (1.0 + std::abs(obj)) &&
        gnorm <= cfg.tol * (1.0 + beta.lpNorm<Eigen::Infinity>())) {
      converged = true;
      ++iter;
      break;
    }
  }

  res.coefficients = beta;
  res.converged = converged;
  res.iterations = iter;
  res.final_objective = obj * wscale;  // back to the caller's weight scale
  return res;
}

FitResult fit_weighted_multinomial(const Eigen::MatrixXd& X, const Eigen::MatrixXd& targets,
                                   const SolverConfig& cfg, const Eigen::MatrixXd* warm_start) {
  const Eigen::Index n = X.rows(), p = X.cols(), K = targets.cols();
  if (targets.rows() != n) raise(ErrorCode::DomainError, "fit_weighted_multinomial: size mismatch");
  if (K < 2) raise(ErrorCode::DomainError, "fit_weighted_multinomial: need K >= 2");
  if (!all_finite(X) || !all_finite(targets))
    raise(ErrorCode::NonFinite, "fit_weighted_multinomial: non-finite input");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(targets.row(i).sum() - 1.0) > 1e-8)
      raise(ErrorCode::DomainError, "fit_weighted_multinomial: target rows must sum to 1");
  }

  const Eigen::Index F = K - 1;  // free classes; the last one is the reference
  Eigen::MatrixXd B = (warm_start && warm_start->rows() == p && warm_start->cols() == F)
                          ? *warm_start
                          : Eigen::MatrixXd::Zero(p, F);

  auto probs_of = [&](const Eigen::MatrixXd& coefs) {
    Eigen::MatrixXd logits(n, K);
    logits.leftCols(F) = X * coefs;
    logits.col(F).setZero();
    return softmax_rows(logits);
  };
  auto objective = [&](const Eigen::MatrixXd& P) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < K; ++k)
        if (targets(i, k) > 0.0) ll += targets(i, k) * std::log(clamp_prob(P(i, k)));
    return ll;
  };

  FitResult res;
  Eigen::MatrixXd P = probs_of(B);
  double obj = objective(P);
  res.objective_history.push_back(obj);

  bool converged = false;
  int iter = 0;
  const Eigen::Index dim = p * F;
  for (; iter < cfg.max_iters; ++iter) {
    Eigen::VectorXd grad(dim);
    for (Eigen::Index a = 0; a < F; ++a)
      grad.segment(a * p, p) = X.transpose() * (targets.col(a) - P.col(a));

    Eigen::MatrixXd info(dim, dim);
    for (Eigen::Index a = 0; a < F; ++a) {
      for (Eigen::Index b = a; b < F; ++b) {
        Eigen::ArrayXd wab;
        if (a == b)
          wab = P.col(a).array() * (1.0 - P.col(b).array());
        else
          wab = -P.col(a).array() * P.col(b).array();
        Eigen::MatrixXd block = X.transpose() * wab.matrix().asDiagonal() * X;
        info.block(a * p, b * p, p, p) = block;
        if (b != a) info.block(b * p, a * p, p, p) = block.transpose();
      }
    }

    Eigen::VectorXd dir = solve_spd(std::move(info), grad, cfg.condition_threshold);

    double step = 1.0;
    bool accepted = false;
    Eigen::MatrixXd B_new, P_new;
    double obj_new = -std::numeric_limits<double>::infinity();
    for (int h = 0; h <= cfg.max_step_halvings; ++h) {
      B_new = B;
      for (Eigen::Index a = 0; a < F; ++a) B_new.col(a) += step * dir.segment(a * p, p);
      P_new = probs_of(B_new);
      obj_new = objective(P_new);
      if (obj_new >= obj) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    double delta = obj_new - obj;
    B = B_new;
    P = P_new;
    obj = obj_new;
    res.objective_history.push_back(obj);

    double gnorm = 0.0;
    for (Eigen::Index a = 0; a < F; ++a)
      gnorm = std::max(gnorm,
                       (X.transpose() * (targets.col(a) - P.col(a))).lpNorm<Eigen::Infinity>());
    double bnorm = B.lpNorm<Eigen::Infinity>();
    if (delta <= cfg.tol * (1.0 + std::abs(obj)) && gnorm <= cfg.tol * (1.0 + bnorm)) {
      converged = true;
      ++iter;
      break;
    }
  }

  res.coefficients = B;
  res.converged = converged;
  res.iterations = iter;
  res.final_objective = obj;
  return res;
}

FitResult fit_weighted_least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& w) {
  const Eigen::Index n = X.rows();
  if (y.size() != n || w.size() != n)
    raise(ErrorCode::DomainError, "fit_weighted_least_squares: size mismatch");
  if (!all_finite(X) || !all_finite(y) || !all_finite(w))
    raise(ErrorCode::NonFinite, "fit_weighted_least_squares: non-finite input");
  if (!(w.sum() > 0.0)) raise(ErrorCode::DegenerateData, "all weights are zero");

  Eigen::MatrixXd XtW = X.transpose() * w.asDiagonal();
  Eigen::MatrixXd A = XtW * X;
  Eigen::VectorXd b = XtW * y;
  Eigen::VectorXd coef = solve_spd(std::move(A), b, 1e12);

  FitResult res;
  res.coefficients = coef;
  res.converged = true;
  res.iterations = 1;
  Eigen::VectorXd r = y - X * coef;
  res.final_objective = (w.array() * r.array().square()).sum();
  return res;
}

}  // namespace cacemix::glm
