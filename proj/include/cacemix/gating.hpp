#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cacemix/data.hpp"
#include "cacemix/glm.hpp"

namespace cacemix {

/// Latent strata, in the fixed order complier, always-taker, never-taker, defier.
/// Mono3 drops the defier stratum.
enum class StratumSet { Full4, Mono3 };

inline int n_strata(StratumSet s) { return s == StratumSet::Full4 ? 4 : 3; }

/// Per-row 0/1 likelihood contributions of each compliance stratum to the
/// observed (z, t) pair. Exactly two entries are 1 on every Full4 row.
Eigen::MatrixXd compliance_likelihoods(const Eigen::VectorXd& z, const Eigen::VectorXd& t,
                                       StratumSet strata = StratumSet::Full4);

/// Softmax-parameterized stratum probabilities. Reference coding: the last
/// stratum (defier, or never-taker under Mono3) has its coefficients pinned at 0.
struct GatingModel {
  StratumSet strata = StratumSet::Full4;
  Eigen::MatrixXd delta;  // (K-1) x p
  std::vector<std::string> design_columns;

  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> loglik_history;
  std::vector<std::string> warnings;

  int n_classes() const { return n_strata(strata); }

  /// n x K stratum probabilities; rows sum to 1.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& X) const;
};

struct GatingEmConfig {
  glm::SolverConfig solver;
  double tol = 1e-8;   // relative log-likelihood change
  int max_iters = 500;
  // Newton steps per M-step. 1 = generalized EM (each damped step still
  // increases the M-step objective, so the likelihood ascent is preserved);
  // a full multinomial fit on the final posteriors polishes the result.
  int mstep_newton_iters = 1;
  bool strict = false;  // DegenerateData becomes a hard error
  int restarts = 0;     // extra randomized restarts (stress testing)
  std::uint64_t seed = 0;
  std::optional<Eigen::MatrixXd> init_delta;  // warm start for bootstrap refits
};

// posterior mass below 10 * cols flags a stratum as degenerate
inline double degenerate_mass_threshold(Eigen::Index cols) { return 10.0 * double(cols); }

/// EM over the mixture of known compliance experts: priors start uniform,
/// E-step normalizes g*L, M-step is a multinomial fit on the posteriors.
GatingModel em_fit_gating(const TrialDataset& data, StratumSet strata,
                          const GatingEmConfig& cfg = {});

/// Posterior stratum probabilities h = g*L / sum(g*L); entries with L = 0 are 0.
Eigen::MatrixXd posterior_strata(const GatingModel& model, const Eigen::VectorXd& z,
                                 const Eigen::VectorXd& t, const Eigen::MatrixXd& X);

/// Contract for plugging an arbitrary multiclass learner into the gating EM.
class MulticlassLearner {
 public:
  virtual ~MulticlassLearner() = default;
  virtual void fit(const Eigen::MatrixXd& X, const Eigen::MatrixXd& soft_targets) = 0;
  virtual Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& X) const = 0;
};

/// The shipped default learner: the parametric multinomial from glm, warm-started
/// across calls so the learner-based EM reproduces em_fit_gating iterate for iterate.
class MultinomialLearner final : public MulticlassLearner {
 public:
  explicit MultinomialLearner(glm::SolverConfig cfg = {}) : cfg_(cfg) {}
  void fit(const Eigen::MatrixXd& X, const Eigen::MatrixXd& soft_targets) override;
  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& X) const override;
  const Eigen::MatrixXd& coefficients() const { return coef_; }

 private:
  glm::SolverConfig cfg_;
  Eigen::MatrixXd coef_;
  bool fitted_ = false;
};

/// One M-step against the learner contract: fit on the posteriors, return the
/// refreshed priors. LearnerContractViolation if predicted rows do not sum to 1.
Eigen::MatrixXd nonparametric_gating_step(MulticlassLearner& learner,
                                          const Eigen::MatrixXd& posteriors,
                                          const Eigen::MatrixXd& X);

struct NonparametricGatingFit {
  Eigen::MatrixXd priors;      // learner predictions at the final iteration
  Eigen::MatrixXd posteriors;  // final E-step
  int iterations = 0;
  bool converged = false;
};

/// EM-like loop with a pluggable learner. Arbitrary learners have no likelihood,
/// so the loop stops when the max-abs posterior change drops below posterior_tol.
NonparametricGatingFit em_fit_gating_nonparametric(const TrialDataset& data, StratumSet strata,
                                                   MulticlassLearner& learner,
                                                   double posterior_tol = 1e-6,
                                                   int max_iters = 500);

}  // namespace cacemix
