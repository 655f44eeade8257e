#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cacemix/baselines.hpp"
#include "cacemix/data.hpp"
#include "cacemix/estimators.hpp"

namespace cacemix {

/// The 2x2 grid of data-generating scenarios:
/// S1 neither holds, S2 exclusion restriction, S3 monotonicity, S4 both.
enum class Scenario { S1 = 1, S2 = 2, S3 = 3, S4 = 4 };

enum class Specification { Well, Misspecified };

inline bool scenario_er(Scenario s) { return s == Scenario::S2 || s == Scenario::S4; }
inline bool scenario_mo(Scenario s) { return s == Scenario::S3 || s == Scenario::S4; }

constexpr int kSimCovariates = 14;          // 7 Bernoulli + 7 log-normal
constexpr int kSimDesignCols = 15;          // intercept + 14
constexpr int kElementaryOutcomes = 8;      // the combos entering the potential outcomes
// order of the elementary columns: c11, a11, a01, d01, c00, n10, n00, d10
int elementary_index(int stratum, int z, int t);

struct SimulationParams {
  std::uint64_t seed = 0;
  Scenario scenario = Scenario::S1;
  Specification specification = Specification::Well;

  Eigen::VectorXd eigenvalues;             // lambda_i = 1 + (i-1)*0.2
  Eigen::MatrixXd orthogonal;              // 14 x 14, O'O = I
  Eigen::MatrixXd delta;                   // 4 x 15, rows c,a,n,d
  std::array<Eigen::VectorXd, 16> beta;    // beta_klm, indexed k*4 + l*2 + m

  bool exclusion_restriction() const { return scenario_er(scenario); }
  // delta_d'x is treated as -inf: the defier stratum has probability 0
  bool monotonicity() const { return scenario_mo(scenario); }

  /// 4-vector (rho_c, rho_a, rho_n, rho_d) at a 15-dim design row.
  Eigen::VectorXd stratum_probs(const Eigen::VectorXd& x) const;
};

/// Seed-deterministic parameter draw: random orthogonal O via QR with
/// sign-corrected R diagonal, delta ~ U[-1,1]^{4x15}, beta_klm ~ U[-1,1]^15.
SimulationParams build_params(std::uint64_t seed, Scenario scenario, Specification spec);

struct PopulationWithTruth {
  Eigen::MatrixXd X;   // n x 15, column 0 intercept
  Eigen::VectorXd z, t, y;
  Eigen::VectorXd y1, y0;                          // potential outcomes
  Eigen::VectorXi stratum;                         // 0=c 1=a 2=n 3=d
  Eigen::Matrix<std::int8_t, Eigen::Dynamic, kElementaryOutcomes> elementary;
  double true_delta = 0.0;  // mean of y1-y0 over complier rows

  Eigen::Index n() const { return X.rows(); }
};

PopulationWithTruth draw_population(const SimulationParams& params, Eigen::Index n,
                                    std::uint64_t draw_seed);

/// Analyst-visible dataset: the well-specified view keeps all 15 design
/// columns, the misspecified one omits x7 and x14.
TrialDataset misspecify_view(const PopulationWithTruth& pop, Specification spec);
TrialDataset misspecify_view_rows(const PopulationWithTruth& pop,
                                  const std::vector<Eigen::Index>& rows, Specification spec);
std::vector<int> view_design_columns(Specification spec);

enum class EstimatorKind { Pi, PiEr, PiMo, PiMoEr, IvWald, IvMatching, OracleTruth };

std::string estimator_kind_label(EstimatorKind k);
AssumptionSet estimator_assumptions(EstimatorKind k);  // PI estimators only

struct StudyConfig {
  std::vector<Scenario> scenarios{Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4};
  Specification spec = Specification::Misspecified;
  std::vector<int> sample_sizes{2000, 5000, 10000};
  int replicates = 1000;
  std::vector<EstimatorKind> estimators{EstimatorKind::Pi,     EstimatorKind::PiEr,
                                        EstimatorKind::PiMo,   EstimatorKind::PiMoEr,
                                        EstimatorKind::IvWald, EstimatorKind::IvMatching};
  std::uint64_t seed = 1;
  Eigen::Index population_size = 1000000;
  PipelineConfig pipeline;
  MatchingConfig matching;
  int threads = 0;  // replicate-level parallelism; 0 = all available
};

struct StudyCell {
  Scenario scenario;
  Specification spec;
  int n = 0;
  EstimatorKind estimator;
  double bias_pct = 0.0, se_pct = 0.0, rmse_pct = 0.0;
  int failures = 0;
  double true_delta = 0.0;
  std::vector<double> estimates;  // successful replicates, in replicate order
};

struct StudyReport {
  std::vector<StudyCell> cells;
};

/// Monte Carlo study: fixed target population per scenario, R subsamples of
/// size n each, every estimator on every subsample; Bias/SE/RMSE in percentage
/// points against the population truth. Replicate r draws everything from a
/// child seed of (seed, scenario, n, r), so thread count never changes output.
StudyReport run_study(const StudyConfig& cfg);

/// Least-squares slope of log(SE) on log(n) for one estimator across the
/// report's sample sizes (the convergence-rate diagnostic).
double log_se_log_n_slope(const StudyReport& report, Scenario scenario, EstimatorKind estimator);

/// The exact dataset replicate `replicate` of a (scenario, n) study cell sees:
/// same population, same subsample, same view. Lets a study dataset be
/// exported and refit externally with bit-identical inputs.
TrialDataset draw_study_dataset(const StudyConfig& cfg, Scenario scenario, int n, int replicate);

}  // namespace cacemix
