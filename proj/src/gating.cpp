#include "cacemix/gating.hpp"

#include <cmath>

#include "cacemix/rng.hpp"

namespace cacemix {

namespace {

const char* stratum_names4[] = {"c", "a", "n", "d"};

// observed-data log-likelihood sum_i ln sum_s g_si L_si
double observed_loglik(const Eigen::MatrixXd& g, const Eigen::MatrixXd& L) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    double mix = (g.row(i).array() * L.row(i).array()).sum();
    ll += std::log(std::max(mix, glm::kProbFloor));
  }
  return ll;
}

Eigen::MatrixXd estep(const Eigen::MatrixXd& g, const Eigen::MatrixXd& L) {
  Eigen::MatrixXd h = g.array() * L.array();
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    double denom = h.row(i).sum();
    if (denom > 0.0) {
      h.row(i) /= denom;
    } else {
      // all active priors underflowed; fall back to uniform over the feasible strata
      double cnt = L.row(i).sum();
      h.row(i) = L.row(i) / cnt;
    }
  }
  return h;
}

}  // namespace

Eigen::MatrixXd compliance_likelihoods(const Eigen::VectorXd& z, const Eigen::VectorXd& t,
                                       StratumSet strata) {
  if (z.size() != t.size())
    raise(ErrorCode::DomainError, "compliance_likelihoods: size mismatch");
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if ((z[i] != 0.0 && z[i] != 1.0) || (t[i] != 0.0 && t[i] != 1.0))
      raise(ErrorCode::NonBinary, "compliance_likelihoods: z and t must be 0/1");
  }
  const int K = n_strata(strata);
  Eigen::MatrixXd L(z.size(), K);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    double zi = z[i], ti = t[i];
    L(i, 0) = zi * ti + (1.0 - zi) * (1.0 - ti);
    L(i, 1) = ti;
    L(i, 2) = 1.0 - ti;
    if (K == 4) L(i, 3) = zi * (1.0 - ti) + (1.0 - zi) * ti;
  }
  return L;
}

Eigen::MatrixXd GatingModel::predict(const Eigen::MatrixXd& X) const {
  const int K = n_classes();
  Eigen::MatrixXd logits(X.rows(), K);
  logits.leftCols(K - 1) = X * delta.transpose();
  logits.col(K - 1).setZero();
  return glm::softmax_rows(logits);
}

GatingModel em_fit_gating(const TrialDataset& data, StratumSet strata,
                          const GatingEmConfig& cfg) {
  data.validate();
  const Eigen::Index n = data.n(), p = data.cols();
  const int K = n_strata(strata);
  const Eigen::MatrixXd L = compliance_likelihoods(data.z, data.t, strata);

  auto run_once = [&](const Eigen::MatrixXd& g0,
                      const std::optional<Eigen::MatrixXd>& delta0) -> GatingModel {
    GatingModel model;
    model.strata = strata;
    model.design_columns = data.columns;

    Eigen::MatrixXd g = g0;
    // coef is kept in the solver's p x (K-1) layout; the model stores its transpose
    Eigen::MatrixXd coef =
        delta0 ? Eigen::MatrixXd(delta0->transpose()) : Eigen::MatrixXd::Zero(p, K - 1);
    bool have_coef = delta0.has_value();
    std::vector<bool> warned(size_t(K), false);

    glm::SolverConfig inner = cfg.solver;
    inner.max_iters = std::max(cfg.mstep_newton_iters, 1);

    auto refresh_priors = [&](const Eigen::MatrixXd& coef_t) {
      Eigen::MatrixXd logits(n, K);
      logits.leftCols(K - 1) = data.X * coef_t;
      logits.col(K - 1).setZero();
      g = glm::softmax_rows(logits);
    };

    Eigen::MatrixXd h;
    double ll_prev = -std::numeric_limits<double>::infinity();
    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
      h = estep(g, L);
      double ll = observed_loglik(g, L);
      model.loglik_history.push_back(ll);
      model.iterations = iter;

      for (int s = 0; s < K; ++s) {
        double mass = h.col(s).sum();
        if (mass < degenerate_mass_threshold(p) && !warned[size_t(s)]) {
          std::string msg = "stratum " + std::string(stratum_names4[s]) +
                            " has posterior mass " + std::to_string(mass) + " (n=" +
                            std::to_string(n) + ")";
          if (cfg.strict) raise(ErrorCode::DegenerateData, msg);
          model.warnings.push_back(msg);
          warned[size_t(s)] = true;
        }
      }

      if (iter > 1 && std::abs(ll - ll_prev) <= cfg.tol * (1.0 + std::abs(ll_prev))) {
        model.converged = true;
        break;
      }
      ll_prev = ll;
      if (iter == cfg.max_iters) break;

      // a degenerate stratum can push the M-step singular as its coefficients
      // diverge; stop the EM there and keep the last usable iterate
      try {
        auto fit = glm::fit_weighted_multinomial(data.X, h, inner, have_coef ? &coef : nullptr);
        coef = fit.coefficients;
        have_coef = true;
        refresh_priors(coef);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SingularSystem) throw;
        model.warnings.push_back("EM stopped early: singular M-step");
        break;
      }
    }

    // polish: solve the final M-step to full precision on the last posteriors
    try {
      auto fit = glm::fit_weighted_multinomial(data.X, h, cfg.solver,
                                               have_coef ? &coef : nullptr);
      coef = fit.coefficients;
      refresh_priors(coef);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularSystem) throw;
      model.warnings.push_back("final M-step singular; keeping the last iterate");
    }
    double ll = observed_loglik(g, L);
    model.loglik_history.push_back(ll);
    model.loglik = ll;
    model.delta = coef.transpose();
    return model;
  };

  const Eigen::MatrixXd uniform =
      Eigen::MatrixXd::Constant(n, K, 1.0 / double(K));
  GatingModel best = run_once(uniform, cfg.init_delta);

  for (int r = 0; r < cfg.restarts; ++r) {
    Rng rng(derive_seed(cfg.seed, {0x6a71, std::uint64_t(r)}));
    Eigen::MatrixXd d0(K - 1, p);
    for (Eigen::Index a = 0; a < d0.rows(); ++a)
      for (Eigen::Index j = 0; j < p; ++j) d0(a, j) = 0.5 * rng.normal();
    Eigen::MatrixXd logits(n, K);
    logits.leftCols(K - 1) = data.X * d0.transpose();
    logits.col(K - 1).setZero();
    GatingModel candidate = run_once(glm::softmax_rows(logits), std::nullopt);
    if (candidate.loglik > best.loglik) best = candidate;
  }
  return best;
}

Eigen::MatrixXd posterior_strata(const GatingModel& model, const Eigen::VectorXd& z,
                                 const Eigen::VectorXd& t, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd g = model.predict(X);
  Eigen::MatrixXd L = compliance_likelihoods(z, t, model.strata);
  return estep(g, L);
}

void MultinomialLearner::fit(const Eigen::MatrixXd& X, const Eigen::MatrixXd& soft_targets) {
  auto res = glm::fit_weighted_multinomial(X, soft_targets, cfg_, fitted_ ? &coef_ : nullptr);
  coef_ = res.coefficients;
  fitted_ = true;
}

Eigen::MatrixXd MultinomialLearner::predict_proba(const Eigen::MatrixXd& X) const {
  const Eigen::Index K = coef_.cols() + 1;
  Eigen::MatrixXd logits(X.rows(), K);
  logits.leftCols(K - 1) = X * coef_;
  logits.col(K - 1).setZero();
  return glm::softmax_rows(logits);
}

Eigen::MatrixXd nonparametric_gating_step(MulticlassLearner& learner,
                                          const Eigen::MatrixXd& posteriors,
                                          const Eigen::MatrixXd& X) {
  learner.fit(X, posteriors);
  Eigen::MatrixXd priors = learner.predict_proba(X);
  if (priors.rows() != X.rows() || priors.cols() != posteriors.cols())
    raise(ErrorCode::LearnerContractViolation, "predict_proba returned wrong shape");
  for (Eigen::Index i = 0; i < priors.rows(); ++i) {
    if (std::abs(priors.row(i).sum() - 1.0) > 1e-6 || priors.row(i).minCoeff() < -1e-12)
      raise(ErrorCode::LearnerContractViolation, "predicted rows must sum to 1");
  }
  return priors;
}

NonparametricGatingFit em_fit_gating_nonparametric(const TrialDataset& data, StratumSet strata,
                                                   MulticlassLearner& learner,
                                                   double posterior_tol, int max_iters) {
  data.validate();
  const int K = n_strata(strata);
  const Eigen::MatrixXd L = compliance_likelihoods(data.z, data.t, strata);

  NonparametricGatingFit fit;
  fit.priors = Eigen::MatrixXd::Constant(data.n(), K, 1.0 / double(K));
  Eigen::MatrixXd h_prev;
  for (int iter = 1; iter <= max_iters; ++iter) {
    fit.posteriors = estep(fit.priors, L);
    fit.iterations = iter;
    if (iter > 1 && (fit.posteriors - h_prev).cwiseAbs().maxCoeff() < posterior_tol) {
      fit.converged = true;
      return fit;
    }
    h_prev = fit.posteriors;
    fit.priors = nonparametric_gating_step(learner, fit.posteriors, data.X);
  }
  return fit;
}

}  // namespace cacemix
