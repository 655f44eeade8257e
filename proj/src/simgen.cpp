#include "cacemix/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "cacemix/baselines.hpp"
#include "cacemix/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cacemix {

int elementary_index(int stratum, int z, int t) {
  // columns: c11, a11, a01, d01, c00, n10, n00, d10
  if (stratum == 0 && z == 1 && t == 1) return 0;
  if (stratum == 1 && z == 1 && t == 1) return 1;
  if (stratum == 1 && z == 0 && t == 1) return 2;
  if (stratum == 3 && z == 0 && t == 1) return 3;
  if (stratum == 0 && z == 0 && t == 0) return 4;
  if (stratum == 2 && z == 1 && t == 0) return 5;
  if (stratum == 2 && z == 0 && t == 0) return 6;
  if (stratum == 3 && z == 1 && t == 0) return 7;
  return -1;
}

Eigen::VectorXd SimulationParams::stratum_probs(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(4);
  if (monotonicity()) {
    Eigen::VectorXd logits = delta.topRows(3) * x;
    out.head(3) = glm::softmax(logits);
  } else {
    out = glm::softmax(delta * x);
  }
  return out;
}

SimulationParams build_params(std::uint64_t seed, Scenario scenario, Specification spec) {
  SimulationParams params;
  params.seed = seed;
  params.scenario = scenario;
  params.specification = spec;

  params.eigenvalues.resize(kSimCovariates);
  for (int i = 0; i < kSimCovariates; ++i) params.eigenvalues[i] = 1.0 + i * 0.2;

  Rng rng(derive_seed(seed, {0x51309e4})); // scenario only toggles flags, not draws

  Eigen::MatrixXd gauss(kSimCovariates, kSimCovariates);
  for (int i = 0; i < kSimCovariates; ++i)
    for (int j = 0; j < kSimCovariates; ++j) gauss(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd Q = qr.householderQ();
  Eigen::MatrixXd R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < kSimCovariates; ++j)
    if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
  params.orthogonal = Q;

  params.delta.resize(4, kSimDesignCols);
  for (int s = 0; s < 4; ++s)
    for (int j = 0; j < kSimDesignCols; ++j) params.delta(s, j) = rng.uniform(-1.0, 1.0);

  for (int k = 0; k < 4; ++k)
    for (int l = 0; l < 2; ++l)
      for (int m = 0; m < 2; ++m) {
        Eigen::VectorXd b(kSimDesignCols);
        for (int j = 0; j < kSimDesignCols; ++j) b[j] = rng.uniform(-1.0, 1.0);
        params.beta[size_t(k * 4 + l * 2 + m)] = std::move(b);
      }
  return params;
}

PopulationWithTruth draw_population(const SimulationParams& params, Eigen::Index n,
                                    std::uint64_t draw_seed) {
  if (n < 1) raise(ErrorCode::DomainError, "population size must be >= 1");
  Rng rng(derive_seed(draw_seed, {0xd09, std::uint64_t(params.scenario)}));

  // X' = A z has covariance O diag(lambda) O'
  Eigen::MatrixXd A = params.orthogonal * params.eigenvalues.cwiseSqrt().asDiagonal();

  PopulationWithTruth pop;
  pop.X.resize(n, kSimDesignCols);
  pop.z.resize(n);
  pop.t.resize(n);
  pop.y.resize(n);
  pop.y1.resize(n);
  pop.y0.resize(n);
  pop.stratum.resize(n);
  pop.elementary.resize(n, kElementaryOutcomes);

  const bool er = params.exclusion_restriction();
  Eigen::VectorXd zvec(kSimCovariates), xprime(kSimCovariates), x(kSimDesignCols);
  double delta_sum = 0.0;
  Eigen::Index complier_count = 0;

  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < kSimCovariates; ++j) zvec[j] = rng.normal();
    xprime.noalias() = A * zvec;
    x[0] = 1.0;
    for (int j = 0; j < 7; ++j) x[1 + j] = xprime[j] > 0.0 ? 1.0 : 0.0;
    for (int j = 7; j < kSimCovariates; ++j) x[1 + j] = std::exp(xprime[j]);
    pop.X.row(i) = x;

    Eigen::VectorXd rho = params.stratum_probs(x);
    double u = rng.uniform();
    int s = 0;
    double cum = rho[0];
    while (s < 3 && u >= cum) {
      ++s;
      cum += rho[s];
    }
    pop.stratum[i] = s;

    double z = rng.bernoulli(0.5);
    pop.z[i] = z;
    double t = (s == 0) ? z : (s == 1) ? 1.0 : (s == 2) ? 0.0 : 1.0 - z;
    pop.t[i] = t;

    std::int8_t eo[kElementaryOutcomes];
    static const int combos[kElementaryOutcomes][3] = {
        {0, 1, 1}, {1, 1, 1}, {1, 0, 1}, {3, 0, 1}, {0, 0, 0}, {2, 1, 0}, {2, 0, 0}, {3, 1, 0}};
    for (int c = 0; c < kElementaryOutcomes; ++c) {
      const auto& km = combos[c];
      double p = glm::expit(params.beta[size_t(km[0] * 4 + km[1] * 2 + km[2])].dot(x));
      eo[c] = std::int8_t(rng.bernoulli(p));
    }
    if (er) {
      eo[1] = eo[2];  // Y^{a,z=1,t=1} <- Y^{a,z=0,t=1}
      eo[5] = eo[6];  // Y^{n,z=1,t=0} <- Y^{n,z=0,t=0}
    }
    for (int c = 0; c < kElementaryOutcomes; ++c) pop.elementary(i, c) = eo[c];

    double sc = s == 0, sa = s == 1, sn = s == 2, sd = s == 3;
    double y1 = sc * eo[0] + sa * z * eo[1] + sa * (1.0 - z) * eo[2] + sd * eo[3];
    double y0 = sc * eo[4] + sn * z * eo[5] + sn * (1.0 - z) * eo[6] + sd * eo[7];
    pop.y1[i] = y1;
    pop.y0[i] = y0;
    pop.y[i] = t * y1 + (1.0 - t) * y0;

    if (s == 0) {
      delta_sum += y1 - y0;
      ++complier_count;
    }
  }

  if (complier_count == 0)
    raise(ErrorCode::DegenerateData, "population has no compliers");
  pop.true_delta = delta_sum / double(complier_count);
  return pop;
}

std::vector<int> view_design_columns(Specification spec) {
  std::vector<int> cols;
  for (int j = 0; j <= 14; ++j) {
    if (spec == Specification::Misspecified && (j == 7 || j == 14)) continue;
    cols.push_back(j);
  }
  return cols;
}

namespace {

TrialDataset make_view(const PopulationWithTruth& pop, const std::vector<Eigen::Index>& rows,
                       Specification spec, bool all_rows) {
  const std::vector<int> cols = view_design_columns(spec);
  const Eigen::Index nr = all_rows ? pop.n() : Eigen::Index(rows.size());
  TrialDataset out;
  out.X.resize(nr, Eigen::Index(cols.size()));
  out.z.resize(nr);
  out.t.resize(nr);
  out.y.resize(nr);
  out.columns.reserve(cols.size());
  for (int j : cols) out.columns.push_back(j == 0 ? "(intercept)" : "x" + std::to_string(j));
  for (Eigen::Index i = 0; i < nr; ++i) {
    Eigen::Index r = all_rows ? i : rows[size_t(i)];
    for (size_t c = 0; c < cols.size(); ++c) out.X(i, Eigen::Index(c)) = pop.X(r, cols[c]);
    out.z[i] = pop.z[r];
    out.t[i] = pop.t[r];
    out.y[i] = pop.y[r];
  }
  return out;
}

}  // namespace

TrialDataset misspecify_view(const PopulationWithTruth& pop, Specification spec) {
  return make_view(pop, {}, spec, true);
}

TrialDataset misspecify_view_rows(const PopulationWithTruth& pop,
                                  const std::vector<Eigen::Index>& rows, Specification spec) {
  return make_view(pop, rows, spec, false);
}

std::string estimator_kind_label(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Pi: return "pi";
    case EstimatorKind::PiEr: return "pi_er";
    case EstimatorKind::PiMo: return "pi_mo";
    case EstimatorKind::PiMoEr: return "pi_mo_er";
    case EstimatorKind::IvWald: return "iv_wald";
    case EstimatorKind::IvMatching: return "iv_matching";
    case EstimatorKind::OracleTruth: return "oracle_truth";
  }
  return "?";
}

AssumptionSet estimator_assumptions(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Pi: return {false, false};
    case EstimatorKind::PiEr: return {true, false};
    case EstimatorKind::PiMo: return {false, true};
    case EstimatorKind::PiMoEr: return {true, true};
    default: raise(ErrorCode::DomainError, "not a plug-in estimator");
  }
}

namespace {

// Floyd's algorithm, then sorted for a deterministic row order.
std::vector<Eigen::Index> sample_without_replacement(Eigen::Index population, Eigen::Index n,
                                                     Rng& rng) {
  std::unordered_set<Eigen::Index> chosen;
  chosen.reserve(size_t(n) * 2);
  for (Eigen::Index j = population - n; j < population; ++j) {
    Eigen::Index t = Eigen::Index(rng.below(std::uint64_t(j) + 1));
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  std::vector<Eigen::Index> rows(chosen.begin(), chosen.end());
  std::sort(rows.begin(), rows.end());
  return rows;
}

bool needs_full4(const std::vector<EstimatorKind>& est) {
  return std::count(est.begin(), est.end(), EstimatorKind::Pi) ||
         std::count(est.begin(), est.end(), EstimatorKind::PiEr);
}

bool needs_mono3(const std::vector<EstimatorKind>& est) {
  return std::count(est.begin(), est.end(), EstimatorKind::PiMo) ||
         std::count(est.begin(), est.end(), EstimatorKind::PiMoEr);
}

}  // namespace

namespace {

std::vector<Eigen::Index> replicate_rows(const StudyConfig& cfg, const PopulationWithTruth& pop,
                                         Scenario scenario, int n, int replicate) {
  const std::uint64_t rep_seed = derive_seed(
      cfg.seed, {std::uint64_t(scenario), std::uint64_t(n), std::uint64_t(replicate)});
  Rng rng(rep_seed);
  return sample_without_replacement(pop.n(), n, rng);
}

}  // namespace

TrialDataset draw_study_dataset(const StudyConfig& cfg, Scenario scenario, int n, int replicate) {
  SimulationParams params = build_params(cfg.seed, scenario, cfg.spec);
  PopulationWithTruth pop =
      draw_population(params, cfg.population_size, derive_seed(cfg.seed, {0x909}));
  return misspecify_view_rows(pop, replicate_rows(cfg, pop, scenario, n, replicate), cfg.spec);
}

StudyReport run_study(const StudyConfig& cfg) {
  if (cfg.replicates < 1) raise(ErrorCode::DomainError, "replicates must be >= 1");
  if (cfg.scenarios.empty() || cfg.sample_sizes.empty() || cfg.estimators.empty())
    raise(ErrorCode::DomainError, "empty study grid");
  for (int n : cfg.sample_sizes)
    if (Eigen::Index(n) > cfg.population_size)
      raise(ErrorCode::DomainError, "sample size exceeds the population");

  StudyReport report;
  const int R = cfg.replicates;
  const size_t E = cfg.estimators.size();

  int nthreads = cfg.threads;
#ifdef _OPENMP
  if (nthreads <= 0) nthreads = omp_get_max_threads();
#endif

  for (Scenario scenario : cfg.scenarios) {
    SimulationParams params = build_params(cfg.seed, scenario, cfg.spec);
    PopulationWithTruth pop =
        draw_population(params, cfg.population_size, derive_seed(cfg.seed, {0x909}));

    for (int n : cfg.sample_sizes) {
      std::vector<double> estimates(size_t(R) * E, std::numeric_limits<double>::quiet_NaN());
      std::vector<char> failed(size_t(R) * E, 0);
      std::exception_ptr fatal = nullptr;

#ifdef _OPENMP
#pragma omp parallel for num_threads(nthreads) schedule(dynamic)
#endif
      for (int r = 0; r < R; ++r) {
        try {
          const std::uint64_t rep_seed =
              derive_seed(cfg.seed, {std::uint64_t(scenario), std::uint64_t(n), std::uint64_t(r)});
          TrialDataset data =
              misspecify_view_rows(pop, replicate_rows(cfg, pop, scenario, n, r), cfg.spec);

          GatingModel full4, mono3;
          bool have_full4 = false, have_mono3 = false;
          GatingEmConfig gcfg = cfg.pipeline.gating;
          if (needs_full4(cfg.estimators)) {
            full4 = em_fit_gating(data, StratumSet::Full4, gcfg);
            have_full4 = true;
          }
          if (needs_mono3(cfg.estimators)) {
            mono3 = em_fit_gating(data, StratumSet::Mono3, gcfg);
            have_mono3 = true;
          }
          AllocationModel eta = estimate_eta(data, cfg.pipeline.eta_mode);

          for (size_t e = 0; e < E; ++e) {
            EstimatorKind kind = cfg.estimators[e];
            size_t slot = size_t(r) * E + e;
            try {
              double value = 0.0;
              switch (kind) {
                case EstimatorKind::IvWald:
                  value = wald_estimator(data.z, data.t, data.y);
                  break;
                case EstimatorKind::IvMatching:
                  value = iv_matching_estimator(data.z, data.t, data.y, eta.predict(data.X),
                                                cfg.matching)
                              .estimate;
                  break;
                case EstimatorKind::OracleTruth:
                  value = pop.true_delta;
                  break;
                default: {
                  AssumptionSet a = estimator_assumptions(kind);
                  PipelineConfig pcfg = cfg.pipeline;
                  pcfg.seed = derive_seed(rep_seed, {0xe5, std::uint64_t(e)});
                  const GatingModel& gating = a.monotonicity ? mono3 : full4;
                  if (a.monotonicity ? !have_mono3 : !have_full4)
                    raise(ErrorCode::DomainError, "gating model missing");
                  value = fit_cace_with_gating(data, a, gating, pcfg).estimate.delta_hat;
                }
              }
              estimates[slot] = value;
            } catch (const Error&) {
              failed[slot] = 1;
            }
          }
        } catch (const Error&) {
          for (size_t e = 0; e < E; ++e) failed[size_t(r) * E + e] = 1;
        } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
          {
            if (!fatal) fatal = std::current_exception();
          }
        }
      }
      if (fatal) std::rethrow_exception(fatal);

      for (size_t e = 0; e < E; ++e) {
        StudyCell cell;
        cell.scenario = scenario;
        cell.spec = cfg.spec;
        cell.n = n;
        cell.estimator = cfg.estimators[e];
        cell.true_delta = pop.true_delta;
        for (int r = 0; r < R; ++r) {
          size_t slot = size_t(r) * E + e;
          if (failed[slot])
            ++cell.failures;
          else
            cell.estimates.push_back(estimates[slot]);
        }
        if (!cell.estimates.empty()) {
          double mean = std::accumulate(cell.estimates.begin(), cell.estimates.end(), 0.0) /
                        double(cell.estimates.size());
          double var = 0.0, mse = 0.0;
          for (double v : cell.estimates) {
            var += (v - mean) * (v - mean);
            mse += (v - cell.true_delta) * (v - cell.true_delta);
          }
          var /= double(cell.estimates.size());  // 1/R so bias^2 + se^2 = rmse^2 exactly
          mse /= double(cell.estimates.size());
          cell.bias_pct = (mean - cell.true_delta) * 100.0;
          cell.se_pct = std::sqrt(var) * 100.0;
          cell.rmse_pct = std::sqrt(mse) * 100.0;
        }
        report.cells.push_back(std::move(cell));
      }
    }
  }
  return report;
}

double log_se_log_n_slope(const StudyReport& report, Scenario scenario, EstimatorKind estimator) {
  std::vector<double> lx, ly;
  for (const StudyCell& cell : report.cells) {
    if (cell.scenario != scenario || cell.estimator != estimator) continue;
    if (cell.se_pct <= 0.0) continue;
    lx.push_back(std::log(double(cell.n)));
    ly.push_back(std::log(cell.se_pct));
  }
  if (lx.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / double(lx.size());
  double my = std::accumulate(ly.begin(), ly.end(), 0.0) / double(ly.size());
  double sxy = 0.0, sxx = 0.0;
  for (size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace cacemix
