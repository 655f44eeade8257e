#include "cacemix/experts.hpp"

#include <cmath>
#include <limits>

#include "cacemix/rng.hpp"

namespace cacemix {

namespace {

void validate_gating(const Eigen::MatrixXd& gating) {
  for (Eigen::Index i = 0; i < gating.rows(); ++i) {
    if (std::abs(gating.row(i).sum() - 1.0) > 1e-8)
      raise(ErrorCode::DomainError, "gating rows must sum to 1");
    if (gating.row(i).minCoeff() < -1e-12 || gating.row(i).maxCoeff() > 1.0 + 1e-12)
      raise(ErrorCode::DomainError, "gating entries must lie in [0,1]");
  }
}

Eigen::MatrixXd log_likelihood_matrix(const Eigen::MatrixXd& predictions,
                                      const Eigen::VectorXd& y, OutcomeKind kind,
                                      const Eigen::VectorXd& sigma2) {
  const Eigen::Index n = y.size(), K = predictions.cols();
  Eigen::MatrixXd logL(n, K);
  if (kind == OutcomeKind::Binary) {
    for (Eigen::Index s = 0; s < K; ++s)
      for (Eigen::Index i = 0; i < n; ++i) {
        double q = glm::clamp_prob(predictions(i, s));
        logL(i, s) = y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
      }
  } else {
    for (Eigen::Index s = 0; s < K; ++s)
      for (Eigen::Index i = 0; i < n; ++i)
        logL(i, s) = glm::gaussian_loglik(y[i], predictions(i, s), sigma2[s]);
  }
  return logL;
}

// E-step in log space; returns h and accumulates the observed log-likelihood.
Eigen::MatrixXd estep_log(const Eigen::MatrixXd& gating, const Eigen::MatrixXd& logL,
                          double* loglik_out) {
  const Eigen::Index n = gating.rows(), K = gating.cols();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, K);
  double ll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index s = 0; s < K; ++s)
      if (gating(i, s) > 0.0) m = std::max(m, std::log(gating(i, s)) + logL(i, s));
    double sum = 0.0;
    for (Eigen::Index s = 0; s < K; ++s) {
      if (gating(i, s) > 0.0) {
        double e = std::exp(std::log(gating(i, s)) + logL(i, s) - m);
        h(i, s) = e;
        sum += e;
      }
    }
    h.row(i) /= sum;
    ll += m + std::log(sum);
  }
  if (loglik_out) *loglik_out = ll;
  return h;
}

// Q-function contribution of one Gaussian expert at variance s2.
double gaussian_q(double mass, double rss, double s2) {
  return -0.5 * mass * std::log(2.0 * M_PI * s2) - rss / (2.0 * s2);
}

}  // namespace

Eigen::VectorXd ExpertModel::predict(const Eigen::MatrixXd& X) const {
  Eigen::VectorXd eta = X * zeta;
  if (kind == OutcomeKind::Binary)
    for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = glm::expit(eta[i]);
  return eta;
}

Eigen::MatrixXd expert_posteriors(const Eigen::MatrixXd& gating,
                                  const Eigen::MatrixXd& predictions,
                                  const Eigen::VectorXd& y, OutcomeKind kind,
                                  const Eigen::VectorXd& sigma2) {
  return estep_log(gating, log_likelihood_matrix(predictions, y, kind, sigma2), nullptr);
}

double gaussian_variance_update(const Eigen::VectorXd& h, const Eigen::VectorXd& resid,
                                Eigen::Index n_rows, Eigen::Index n_cols,
                                VarianceDenominator vd) {
  double rss = (h.array() * resid.array().square()).sum();
  double denom = vd == VarianceDenominator::DegreesOfFreedom ? double(n_rows - n_cols) : h.sum();
  if (!(denom > 0.0)) denom = std::max(h.sum(), 1.0);
  return std::max(rss / denom, 1e-12);
}

ExpertFit em_fit_experts(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const Eigen::MatrixXd& gating, OutcomeKind kind,
                         const ExpertEmConfig& cfg, std::uint64_t seed) {
  const Eigen::Index n = X.rows(), p = X.cols(), K = gating.cols();
  if (n == 0) raise(ErrorCode::EmptySubset, "expert EM received an empty subset");
  if (n < p) raise(ErrorCode::DegenerateData, "fewer rows than coefficients to fit");
  if (gating.rows() != n || y.size() != n)
    raise(ErrorCode::DomainError, "expert EM: size mismatch");
  if (!X.allFinite() || !y.allFinite()) raise(ErrorCode::NonFinite, "expert EM: non-finite input");
  validate_gating(gating);
  if (kind == OutcomeKind::Binary) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (y[i] != 0.0 && y[i] != 1.0)
        raise(ErrorCode::NonBinary, "binary outcome must be strictly 0/1");
  }

  // init covariance: 0.01 identity scaled by per-column inverse variance
  Eigen::VectorXd init_sd(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    double mu = X.col(j).mean();
    double var = (X.col(j).array() - mu).square().sum() / double(n);
    init_sd[j] = std::sqrt(cfg.init_scale / (var > 1e-8 ? var : 1.0));
  }

  const double mass_floor = double(p) + 1.0;
  std::vector<bool> active(static_cast<size_t>(K));
  for (Eigen::Index s = 0; s < K; ++s) active[size_t(s)] = gating.col(s).maxCoeff() > 0.0;

  glm::SolverConfig inner = cfg.solver;
  inner.max_iters = std::max(cfg.mstep_newton_iters, 1);

  auto run_once = [&](std::vector<ExpertModel> experts) -> ExpertFit {
    ExpertFit fit;
    std::vector<bool> ever_fit(size_t(K), false);

    Eigen::MatrixXd predictions(n, K);
    Eigen::VectorXd sigma2(K);
    for (Eigen::Index s = 0; s < K; ++s) {
      predictions.col(s) = experts[size_t(s)].predict(X);
      sigma2[s] = experts[size_t(s)].sigma2;
    }

    auto mstep = [&](const Eigen::MatrixXd& h, const glm::SolverConfig& scfg) {
      for (Eigen::Index s = 0; s < K; ++s) {
        if (!active[size_t(s)]) continue;
        double mass = h.col(s).sum();
        if (mass < mass_floor) continue;  // too little weight to refit

        ExpertModel& ex = experts[size_t(s)];
        if (kind == OutcomeKind::Binary) {
          auto res = glm::fit_weighted_logistic(X, y, h.col(s), scfg,
                                                ever_fit[size_t(s)] ? &ex.zeta : nullptr);
          ex.zeta = res.coefficients.col(0);
        } else {
          auto res = glm::fit_weighted_least_squares(X, y, h.col(s));
          ex.zeta = res.coefficients.col(0);
          Eigen::VectorXd resid = y - X * ex.zeta;
          double proposed = gaussian_variance_update(h.col(s), resid, n, p,
                                                     cfg.variance_denominator);
          if (cfg.guard_monotone && cfg.variance_denominator == VarianceDenominator::DegreesOfFreedom) {
            double rss = (h.col(s).array() * resid.array().square()).sum();
            if (gaussian_q(mass, rss, proposed) < gaussian_q(mass, rss, ex.sigma2))
              proposed = gaussian_variance_update(h.col(s), resid, n, p,
                                                  VarianceDenominator::PosteriorMass);
          }
          ex.sigma2 = proposed;
          sigma2[s] = ex.sigma2;
        }
        ever_fit[size_t(s)] = true;
        predictions.col(s) = ex.predict(X);
      }
    };

    Eigen::MatrixXd h;
    double ll_prev = -std::numeric_limits<double>::infinity();
    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
      double ll = 0.0;
      h = estep_log(gating, log_likelihood_matrix(predictions, y, kind, sigma2), &ll);
      fit.loglik_history.push_back(ll);
      fit.iterations = iter;

      if (iter > 1 && std::abs(ll - ll_prev) <= cfg.tol * (1.0 + std::abs(ll_prev))) {
        fit.converged = true;
        break;
      }
      ll_prev = ll;
      if (iter == cfg.max_iters) break;
      mstep(h, inner);
    }

    // full-precision M-step on the final posteriors; the GEM inequality keeps
    // the appended observed log-likelihood from decreasing
    mstep(h, cfg.solver);
    double ll = 0.0;
    estep_log(gating, log_likelihood_matrix(predictions, y, kind, sigma2), &ll);
    fit.loglik_history.push_back(ll);
    fit.loglik = ll;

    for (Eigen::Index s = 0; s < K; ++s) {
      experts[size_t(s)].trained = ever_fit[size_t(s)] && h.col(s).sum() >= mass_floor;
      experts[size_t(s)].kind = kind;
    }
    fit.experts = std::move(experts);
    fit.posteriors = h;
    return fit;
  };

  if (cfg.init_experts) {
    if (Eigen::Index(cfg.init_experts->size()) != K)
      raise(ErrorCode::DomainError, "init_experts has the wrong expert count");
    return run_once(*cfg.init_experts);
  }

  ExpertFit best;
  best.loglik = -std::numeric_limits<double>::infinity();
  bool any_ok = false;
  int starts = std::max(cfg.n_starts, 1);
  for (int r = 0; r < starts; ++r) {
    Rng rng(derive_seed(seed, {0x45784d, std::uint64_t(r)}));
    std::vector<ExpertModel> experts(static_cast<size_t>(K));
    for (Eigen::Index s = 0; s < K; ++s) {
      ExpertModel& ex = experts[size_t(s)];
      ex.kind = kind;
      ex.zeta.resize(p);
      for (Eigen::Index j = 0; j < p; ++j) ex.zeta[j] = init_sd[j] * rng.normal();
      ex.sigma2 = 1.0;
    }
    try {
      ExpertFit fit = run_once(std::move(experts));
      fit.chosen_start = r;
      if (fit.loglik > best.loglik) best = std::move(fit);
      any_ok = true;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularSystem) throw;  // a singular start is skipped
    }
  }
  if (!any_ok) raise(ErrorCode::SingularSystem, "every expert EM start hit a singular M-step");
  return best;
}

ExpertFit em_fit_experts_2(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::MatrixXd& gating, OutcomeKind kind,
                           const ExpertEmConfig& cfg, std::uint64_t seed) {
  if (gating.cols() != 2) raise(ErrorCode::DomainError, "em_fit_experts_2 needs 2 gating columns");
  return em_fit_experts(X, y, gating, kind, cfg, seed);
}

ExpertFit em_fit_experts_3(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::MatrixXd& gating, OutcomeKind kind,
                           const ExpertEmConfig& cfg, std::uint64_t seed) {
  if (gating.cols() != 3) raise(ErrorCode::DomainError, "em_fit_experts_3 needs 3 gating columns");
  return em_fit_experts(X, y, gating, kind, cfg, seed);
}

void GlmLearner::fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                     const Eigen::VectorXd& w) {
  if (kind_ == OutcomeKind::Binary) {
    auto res = glm::fit_weighted_logistic(X, y, w, cfg_, fitted_ ? &coef_ : nullptr);
    coef_ = res.coefficients.col(0);
  } else {
    auto res = glm::fit_weighted_least_squares(X, y, w);
    coef_ = res.coefficients.col(0);
  }
  fitted_ = true;
}

Eigen::VectorXd GlmLearner::predict(const Eigen::MatrixXd& X) const {
  Eigen::VectorXd eta = X * coef_;
  if (kind_ == OutcomeKind::Binary)
    for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = glm::expit(eta[i]);
  return eta;
}

ExpertStepState nonparametric_expert_step(std::vector<WeightedLearner*>& learners,
                                          const Eigen::MatrixXd& posteriors,
                                          const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                          OutcomeKind kind, const Eigen::VectorXd* sigma2_in,
                                          VarianceDenominator vd) {
  const Eigen::Index n = X.rows(), K = posteriors.cols();
  if (Eigen::Index(learners.size()) != K)
    raise(ErrorCode::DomainError, "one learner per expert is required");

  ExpertStepState state;
  state.predictions.resize(n, K);
  state.sigma2 = sigma2_in ? *sigma2_in : Eigen::VectorXd::Ones(K);
  for (Eigen::Index s = 0; s < K; ++s) {
    learners[size_t(s)]->fit(X, y, posteriors.col(s));
    Eigen::VectorXd pred = learners[size_t(s)]->predict(X);
    if (pred.size() != n)
      raise(ErrorCode::LearnerContractViolation, "predict returned the wrong length");
    if (kind == OutcomeKind::Binary &&
        (pred.minCoeff() < -1e-12 || pred.maxCoeff() > 1.0 + 1e-12))
      raise(ErrorCode::LearnerContractViolation, "binary learner predictions must lie in [0,1]");
    state.predictions.col(s) = pred;
    // the nonparametric update divides by n' (not n'-d): pass n_cols = 0
    if (kind == OutcomeKind::Continuous)
      state.sigma2[s] = gaussian_variance_update(posteriors.col(s), y - pred, n, 0, vd);
  }
  return state;
}

NonparametricExpertFit em_fit_experts_nonparametric(std::vector<WeightedLearner*>& learners,
                                                    const Eigen::MatrixXd& gating,
                                                    const Eigen::MatrixXd& X,
                                                    const Eigen::VectorXd& y, OutcomeKind kind,
                                                    const ExpertStepState& init,
                                                    double posterior_tol, int max_iters) {
  validate_gating(gating);
  NonparametricExpertFit fit;
  fit.state = init;
  Eigen::MatrixXd h_prev;
  for (int iter = 1; iter <= max_iters; ++iter) {
    fit.posteriors = expert_posteriors(gating, fit.state.predictions, y, kind, fit.state.sigma2);
    fit.iterations = iter;
    if (iter > 1 && (fit.posteriors - h_prev).cwiseAbs().maxCoeff() < posterior_tol) {
      fit.converged = true;
      return fit;
    }
    h_prev = fit.posteriors;
    fit.state = nonparametric_expert_step(learners, fit.posteriors, X, y, kind,
                                          &fit.state.sigma2, VarianceDenominator::DegreesOfFreedom);
  }
  return fit;
}

}  // namespace cacemix
