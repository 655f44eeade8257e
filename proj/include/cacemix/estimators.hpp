#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cacemix/data.hpp"
#include "cacemix/experts.hpp"
#include "cacemix/gating.hpp"

namespace cacemix {

/// Which of the four plug-in estimators to run:
/// (F,F) pi, (T,F) pi_er, (F,T) pi_mo, (T,T) pi_mo_er.
struct AssumptionSet {
  bool exclusion_restriction = false;
  bool monotonicity = false;
};

std::string estimator_label(const AssumptionSet& a);

enum class EtaMode { ConstantMle, Logistic };

/// Allocation-ratio model eta(x) = E[Z|x]: the sample mean of Z, or a logistic fit.
struct AllocationModel {
  bool constant = true;
  double value = 0.5;
  Eigen::VectorXd coef;

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
};

AllocationModel estimate_eta(const TrialDataset& data, EtaMode mode,
                             const glm::SolverConfig& cfg = {});

/// Per-row probabilities derived from a fitted gating model:
/// P_c11 = rho_c/(rho_c+rho_a), P_c00 = rho_c/(rho_c+rho_n),
/// e = rho_c*eta + rho_a + rho_d*(1-eta), and the P_{k.m} ratios.
struct StratumProbabilities {
  Eigen::MatrixXd rho;  // n x 4 (c,a,n,d); defier column is exactly 0 under Mono3
  Eigen::VectorXd p_c11, p_c00;
  Eigen::VectorXd p_c1, p_a1, p_d1;  // P_{k.1}
  Eigen::VectorXd p_c0, p_n0, p_d0;  // P_{k.0}
  Eigen::VectorXd eta, e;
};

StratumProbabilities compute_stratum_probabilities(const GatingModel& gating,
                                                   const AllocationModel& eta_model,
                                                   const Eigen::MatrixXd& X);

/// rho_c-weighted mean of q_c11 - q_c00.
double plug_in_cace(const Eigen::VectorXd& rho_c, const Eigen::VectorXd& q_c11,
                    const Eigen::VectorXd& q_c00);

struct PipelineConfig {
  GatingEmConfig gating;
  ExpertEmConfig experts;
  EtaMode eta_mode = EtaMode::ConstantMle;
  OutcomeKind outcome = OutcomeKind::Binary;
  std::uint64_t seed = 0;
  bool strict = false;
};

struct BootstrapResult {
  int replicates = 0;
  int failures = 0;
  double level = 0.95;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::vector<double> samples;  // successful replicate estimates, in replicate order
};

struct CaceEstimate {
  double delta_hat = 0.0;
  AssumptionSet assumptions;
  Eigen::Index n = 0;
  std::optional<BootstrapResult> bootstrap;
};

struct FittedCace {
  CaceEstimate estimate;
  GatingModel gating;
  AllocationModel eta;
  StratumProbabilities probs;
  std::vector<ExpertModel> experts_treated;  // fit on {Z=1,T=1} or {T=1}
  std::vector<ExpertModel> experts_control;  // fit on {Z=0,T=0} or {T=0}
  Eigen::VectorXd q_c11, q_c00;  // complier predictions on all n rows
  double extrapolation_share = 0.0;  // rows outside the expert subsets' covariate range
  std::vector<std::string> warnings;
};

/// Run the full two-step pipeline for the given assumption set: gating EM,
/// stratum probabilities, expert EM on the subset the estimator prescribes,
/// then the plug-in ratio over all n rows.
FittedCace fit_cace(const TrialDataset& data, const AssumptionSet& assumptions,
                    const PipelineConfig& cfg);

/// Same, reusing an already-fitted gating model (it must match the assumption
/// set's stratum structure). Lets callers share step 1 across estimators.
FittedCace fit_cace_with_gating(const TrialDataset& data, const AssumptionSet& assumptions,
                                const GatingModel& gating, const PipelineConfig& cfg);

struct BootstrapConfig {
  int replicates = 999;
  double level = 0.95;
  int threads = 0;         // 0 = all available
  bool warm_start = true;  // start replicate fits from the full-data solution
  double max_failure_share = 0.10;
};

/// Nonparametric bootstrap: resample rows, refit the full pipeline, percentile CI.
/// Replicate r draws from a child seed of `seed`, so results do not depend on
/// the number of threads. Failed replicates are dropped and counted;
/// TooManyFailures above max_failure_share.
CaceEstimate bootstrap_cace(const TrialDataset& data, const AssumptionSet& assumptions,
                            const PipelineConfig& cfg, const BootstrapConfig& boot,
                            std::uint64_t seed);

/// Percentile interval (floor/ceil order statistics of (B+1)*q, clamped).
std::pair<double, double> percentile_interval(std::vector<double> samples, double level);

/// Row-resampling bootstrap of an arbitrary statistic (used for the IV
/// baselines). Same child-seed scheme and failure policy as bootstrap_cace.
BootstrapResult bootstrap_statistic(const TrialDataset& data,
                                    const std::function<double(const TrialDataset&)>& statistic,
                                    const BootstrapConfig& boot, std::uint64_t seed);

}  // namespace cacemix
