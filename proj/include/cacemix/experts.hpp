#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "cacemix/glm.hpp"

namespace cacemix {

enum class OutcomeKind { Binary, Continuous };

/// Denominator of the Gaussian variance update: the degrees-of-freedom form
/// n'-d, or the posterior mass sum(h) (the exact M-step maximizer).
enum class VarianceDenominator { DegreesOfFreedom, PosteriorMass };

/// One conditional-outcome expert: expit(zeta'x) for binary outcomes,
/// zeta'x with residual variance sigma2 for continuous ones.
struct ExpertModel {
  Eigen::VectorXd zeta;
  double sigma2 = 1.0;
  OutcomeKind kind = OutcomeKind::Binary;
  bool trained = false;

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
};

struct ExpertEmConfig {
  glm::SolverConfig solver;
  double tol = 1e-8;  // relative log-likelihood change
  int max_iters = 500;
  // Newton steps per logistic M-step (generalized EM); the returned experts
  // are a fully converged M-step on the final posteriors.
  int mstep_newton_iters = 1;
  int n_starts = 5;          // random restarts; best final log-likelihood wins
  double init_scale = 0.01;  // zeta ~ N(0, init_scale / column variance)
  VarianceDenominator variance_denominator = VarianceDenominator::DegreesOfFreedom;
  // Enforce the classical EM ascent property: reject a variance update that
  // would lower the weighted Gaussian log-likelihood (the n'-d update is not
  // the M-step maximizer and can otherwise break monotonicity).
  bool guard_monotone = false;
  std::optional<std::vector<ExpertModel>> init_experts;  // warm start; skips the random starts
};

struct ExpertFit {
  std::vector<ExpertModel> experts;
  Eigen::MatrixXd posteriors;  // h at the last completed iteration
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> loglik_history;
  int chosen_start = 0;
};

/// E-step: h_s = g_s L_s / sum_j g_j L_j, computed in log space.
/// Rows keep exact zeros wherever the prior g_s is 0.
Eigen::MatrixXd expert_posteriors(const Eigen::MatrixXd& gating,
                                  const Eigen::MatrixXd& predictions,
                                  const Eigen::VectorXd& y, OutcomeKind kind,
                                  const Eigen::VectorXd& sigma2);

/// Gaussian variance update sum(h r^2) / denom with denom = n'-d or sum(h).
double gaussian_variance_update(const Eigen::VectorXd& h, const Eigen::VectorXd& resid,
                                Eigen::Index n_rows, Eigen::Index n_cols,
                                VarianceDenominator vd);

/// EM for a mixture of K experts with known, fixed gating probabilities
/// (K = gating.cols(), 2 or 3). Multi-start with seed-derived initializations.
ExpertFit em_fit_experts(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const Eigen::MatrixXd& gating, OutcomeKind kind,
                         const ExpertEmConfig& cfg, std::uint64_t seed);

/// Two experts (complier / non-complier), gating = (P_c, 1-P_c).
ExpertFit em_fit_experts_2(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::MatrixXd& gating, OutcomeKind kind,
                           const ExpertEmConfig& cfg, std::uint64_t seed);

/// Three experts (complier / always-or-never-taker / defier) for the
/// exclusion-restriction pipelines.
ExpertFit em_fit_experts_3(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::MatrixXd& gating, OutcomeKind kind,
                           const ExpertEmConfig& cfg, std::uint64_t seed);

/// Contract for plugging weighted nonparametric learners into the expert EM.
class WeightedLearner {
 public:
  virtual ~WeightedLearner() = default;
  virtual void fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                   const Eigen::VectorXd& w) = 0;
  virtual Eigen::VectorXd predict(const Eigen::MatrixXd& X) const = 0;
};

/// Default learner: the parametric GLM (weighted logistic or least squares).
class GlmLearner final : public WeightedLearner {
 public:
  explicit GlmLearner(OutcomeKind kind, glm::SolverConfig cfg = {}) : kind_(kind), cfg_(cfg) {}
  void fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w) override;
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const override;
  const Eigen::VectorXd& coefficients() const { return coef_; }

 private:
  OutcomeKind kind_;
  glm::SolverConfig cfg_;
  Eigen::VectorXd coef_;
  bool fitted_ = false;
};

struct ExpertStepState {
  Eigen::MatrixXd predictions;  // n' x K
  Eigen::VectorXd sigma2;       // per expert (continuous only)
};

/// One M-step against the learner contract: fit every expert's learner with the
/// posterior weights, refresh predictions (and variances for continuous outcomes).
/// With VarianceDenominator::DegreesOfFreedom the nonparametric variance update divides
/// by n' (not n'-d, which is the parametric engine's flavor).
ExpertStepState nonparametric_expert_step(std::vector<WeightedLearner*>& learners,
                                          const Eigen::MatrixXd& posteriors,
                                          const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                          OutcomeKind kind,
                                          const Eigen::VectorXd* sigma2_in = nullptr,
                                          VarianceDenominator vd = VarianceDenominator::DegreesOfFreedom);

struct NonparametricExpertFit {
  ExpertStepState state;
  Eigen::MatrixXd posteriors;
  int iterations = 0;
  bool converged = false;
};

/// EM-like loop with pluggable learners, starting from the supplied predictions.
/// Stops on max-abs posterior change below posterior_tol.
NonparametricExpertFit em_fit_experts_nonparametric(std::vector<WeightedLearner*>& learners,
                                                    const Eigen::MatrixXd& gating,
                                                    const Eigen::MatrixXd& X,
                                                    const Eigen::VectorXd& y, OutcomeKind kind,
                                                    const ExpertStepState& init,
                                                    double posterior_tol = 1e-6,
                                                    int max_iters = 500);

}  // namespace cacemix
