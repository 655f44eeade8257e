#include "cacemix/estimators.hpp"

#include <algorithm>
#include <cmath>

#include "cacemix/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cacemix {

std::string estimator_label(const AssumptionSet& a) {
  if (a.exclusion_restriction && a.monotonicity) return "pi_mo_er";
  if (a.exclusion_restriction) return "pi_er";
  if (a.monotonicity) return "pi_mo";
  return "pi";
}

Eigen::VectorXd AllocationModel::predict(const Eigen::MatrixXd& X) const {
  if (constant) return Eigen::VectorXd::Constant(X.rows(), value);
  Eigen::VectorXd eta = X * coef;
  for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = glm::expit(eta[i]);
  return eta;
}

AllocationModel estimate_eta(const TrialDataset& data, EtaMode mode,
                             const glm::SolverConfig& cfg) {
  data.validate();
  AllocationModel model;
  if (mode == EtaMode::ConstantMle) {
    model.constant = true;
    model.value = data.z.mean();
  } else {
    model.constant = false;
    auto fit = glm::fit_weighted_logistic(data.X, data.z, Eigen::VectorXd::Ones(data.n()), cfg);
    model.coef = fit.coefficients.col(0);
  }
  return model;
}

namespace {

constexpr double kPositivityEps = 1e-10;

void check_interior(double v, const char* what) {
  if (!(v > kPositivityEps) || !(v < 1.0 - kPositivityEps))
    raise(ErrorCode::PositivityViolation, std::string(what) + " outside (0,1)");
}

}  // namespace

StratumProbabilities compute_stratum_probabilities(const GatingModel& gating,
                                                   const AllocationModel& eta_model,
                                                   const Eigen::MatrixXd& X) {
  const Eigen::Index n = X.rows();
  const int K = gating.n_classes();
  StratumProbabilities out;

  // keep the raw logits: the probability ratios below stay exact where the
  // softmax outputs themselves underflow (saturated tails)
  Eigen::MatrixXd logits(n, K);
  logits.leftCols(K - 1) = X * gating.delta.transpose();
  logits.col(K - 1).setZero();
  Eigen::MatrixXd pred = glm::softmax_rows(logits);

  out.rho.resize(n, 4);
  if (gating.strata == StratumSet::Full4) {
    out.rho = pred;
  } else {
    out.rho.leftCols(3) = pred;
    out.rho.col(3).setZero();
  }

  out.eta = eta_model.predict(X);
  out.p_c11.resize(n);
  out.p_c00.resize(n);
  out.p_c1.resize(n);
  out.p_a1.resize(n);
  out.p_d1.resize(n);
  out.p_c0.resize(n);
  out.p_n0.resize(n);
  out.p_d0.resize(n);
  out.e.resize(n);

  for (Eigen::Index i = 0; i < n; ++i) {
    double rc = out.rho(i, 0), ra = out.rho(i, 1), rn = out.rho(i, 2), rd = out.rho(i, 3);
    double eta = out.eta[i];
    check_interior(eta, "eta(x)");

    // rho_c/(rho_c+rho_a) = expit(l_c - l_a); same for rho_c/(rho_c+rho_n)
    out.p_c11[i] = glm::expit(logits(i, 0) - logits(i, 1));
    out.p_c00[i] = glm::expit(logits(i, 0) - logits(i, 2));
    if (!std::isfinite(out.p_c11[i]))
      raise(ErrorCode::PositivityViolation, "rho_c + rho_a vanishes: P_c11 undefined");
    if (!std::isfinite(out.p_c00[i]))
      raise(ErrorCode::PositivityViolation, "rho_c + rho_n vanishes: P_c00 undefined");

    double e = rc * eta + ra + rd * (1.0 - eta);
    out.e[i] = e;

    // P_{k.m} as normalized mixtures: identical algebra to the eta/e ratios,
    // stable even when e saturates toward 0 or 1
    double w1c = eta * rc, w1a = ra, w1d = (1.0 - eta) * rd;
    double w0c = (1.0 - eta) * rc, w0n = rn, w0d = eta * rd;
    double denom1 = w1c + w1a + w1d;
    double denom0 = w0c + w0n + w0d;
    if (!(denom1 > 0.0) || !(denom0 > 0.0))
      raise(ErrorCode::PositivityViolation, "e(x) saturates: P_{k.m} undefined");
    out.p_c1[i] = w1c / denom1;
    out.p_a1[i] = w1a / denom1;
    out.p_d1[i] = w1d / denom1;
    out.p_c0[i] = w0c / denom0;
    out.p_n0[i] = w0n / denom0;
    out.p_d0[i] = w0d / denom0;
  }
  return out;
}

double plug_in_cace(const Eigen::VectorXd& rho_c, const Eigen::VectorXd& q_c11,
                    const Eigen::VectorXd& q_c00) {
  if (rho_c.size() != q_c11.size() || rho_c.size() != q_c00.size())
    raise(ErrorCode::DomainError, "plug_in_cace: size mismatch");
  double denom = rho_c.sum();
  if (!(denom > 0.0)) raise(ErrorCode::PositivityViolation, "sum of rho_c is zero");
  double num = (rho_c.array() * (q_c11 - q_c00).array()).sum();
  return num / denom;
}

namespace {

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(Eigen::Index(rows.size()), m.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = m.row(rows[size_t(i)]);
  return out;
}

Eigen::VectorXd select(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& rows) {
  Eigen::VectorXd out(Eigen::Index(rows.size()));
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = v[rows[size_t(i)]];
  return out;
}

// share of rows with any non-intercept covariate outside both subsets' ranges
double extrapolation_share(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& sub1,
                           const std::vector<Eigen::Index>& sub2) {
  const Eigen::Index p = X.cols();
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::infinity());
  Eigen::VectorXd hi = -lo;
  auto fold = [&](const std::vector<Eigen::Index>& rows) {
    for (Eigen::Index r : rows) {
      lo = lo.cwiseMin(X.row(r).transpose());
      hi = hi.cwiseMax(X.row(r).transpose());
    }
  };
  fold(sub1);
  fold(sub2);
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 1; j < p; ++j) {
      if (X(i, j) < lo[j] || X(i, j) > hi[j]) {
        ++count;
        break;
      }
    }
  }
  return X.rows() ? double(count) / double(X.rows()) : 0.0;
}

struct SubsetPlan {
  std::vector<Eigen::Index> rows;
  Eigen::MatrixXd gating;  // known mixing proportions on the subset
};

SubsetPlan treated_plan(const TrialDataset& data, const AssumptionSet& a,
                        const StratumProbabilities& probs) {
  SubsetPlan plan;
  if (!a.exclusion_restriction) {
    plan.rows = data.rows_where_zt(1, 1);
    plan.gating.resize(Eigen::Index(plan.rows.size()), 2);
    plan.gating.col(0) = select(probs.p_c11, plan.rows);
    plan.gating.col(1) = 1.0 - plan.gating.col(0).array();
  } else if (a.monotonicity) {
    plan.rows = data.rows_where_t(1);
    plan.gating.resize(Eigen::Index(plan.rows.size()), 2);
    plan.gating.col(0) = select(probs.p_c1, plan.rows);
    plan.gating.col(1) = 1.0 - plan.gating.col(0).array();
  } else {
    plan.rows = data.rows_where_t(1);
    plan.gating.resize(Eigen::Index(plan.rows.size()), 3);
    plan.gating.col(0) = select(probs.p_c1, plan.rows);
    plan.gating.col(1) = select(probs.p_a1, plan.rows);
    plan.gating.col(2) = select(probs.p_d1, plan.rows);
  }
  return plan;
}

SubsetPlan control_plan(const TrialDataset& data, const AssumptionSet& a,
                        const StratumProbabilities& probs) {
  SubsetPlan plan;
  if (!a.exclusion_restriction) {
    plan.rows = data.rows_where_zt(0, 0);
    plan.gating.resize(Eigen::Index(plan.rows.size()), 2);
    plan.gating.col(0) = select(probs.p_c00, plan.rows);
    plan.gating.col(1) = 1.0 - plan.gating.col(0).array();
  } else if (a.monotonicity) {
    plan.rows = data.rows_where_t(0);
    plan.gating.resize(Eigen::Index(plan.rows.size()), 2);
    plan.gating.col(0) = select(probs.p_c0, plan.rows);
    plan.gating.col(1) = 1.0 - plan.gating.col(0).array();
  } else {
    plan.rows = data.rows_where_t(0);
    plan.gating.resize(Eigen::Index(plan.rows.size()), 3);
    plan.gating.col(0) = select(probs.p_c0, plan.rows);
    plan.gating.col(1) = select(probs.p_n0, plan.rows);
    plan.gating.col(2) = select(probs.p_d0, plan.rows);
  }
  return plan;
}

FittedCace fit_with_gating_impl(const TrialDataset& data, const AssumptionSet& assumptions,
                                const GatingModel& gating, const PipelineConfig& cfg,
                                const FittedCace* warm) {
  FittedCace out;
  out.gating = gating;
  out.warnings = gating.warnings;

  out.eta = estimate_eta(data, cfg.eta_mode, cfg.gating.solver);
  out.probs = compute_stratum_probabilities(gating, out.eta, data.X);

  SubsetPlan treated = treated_plan(data, assumptions, out.probs);
  SubsetPlan control = control_plan(data, assumptions, out.probs);
  if (treated.rows.empty()) raise(ErrorCode::EmptySubset, "no rows in the treated expert subset");
  if (control.rows.empty()) raise(ErrorCode::EmptySubset, "no rows in the control expert subset");

  ExpertEmConfig ecfg_t = cfg.experts;
  ExpertEmConfig ecfg_c = cfg.experts;
  if (warm) {
    ecfg_t.init_experts = warm->experts_treated;
    ecfg_c.init_experts = warm->experts_control;
  }

  auto fit_t = em_fit_experts(select_rows(data.X, treated.rows), select(data.y, treated.rows),
                              treated.gating, cfg.outcome, ecfg_t,
                              derive_seed(cfg.seed, {0x7431, 1}));
  auto fit_c = em_fit_experts(select_rows(data.X, control.rows), select(data.y, control.rows),
                              control.gating, cfg.outcome, ecfg_c,
                              derive_seed(cfg.seed, {0x7430, 0}));

  if (!fit_t.experts[0].trained || !fit_c.experts[0].trained)
    raise(ErrorCode::ComplierExpertUntrained,
          "complier expert received too little posterior mass");

  out.experts_treated = fit_t.experts;
  out.experts_control = fit_c.experts;
  out.q_c11 = fit_t.experts[0].predict(data.X);
  out.q_c00 = fit_c.experts[0].predict(data.X);
  out.extrapolation_share = extrapolation_share(data.X, treated.rows, control.rows);

  out.estimate.delta_hat = plug_in_cace(out.probs.rho.col(0), out.q_c11, out.q_c00);
  out.estimate.assumptions = assumptions;
  out.estimate.n = data.n();
  return out;
}

FittedCace fit_impl(const TrialDataset& data, const AssumptionSet& assumptions,
                    const PipelineConfig& cfg, const FittedCace* warm) {
  data.validate();
  GatingEmConfig gcfg = cfg.gating;
  gcfg.strict = gcfg.strict || cfg.strict;
  if (warm) gcfg.init_delta = warm->gating.delta;
  StratumSet strata = assumptions.monotonicity ? StratumSet::Mono3 : StratumSet::Full4;
  GatingModel gating = em_fit_gating(data, strata, gcfg);
  return fit_with_gating_impl(data, assumptions, gating, cfg, warm);
}

}  // namespace

FittedCace fit_cace(const TrialDataset& data, const AssumptionSet& assumptions,
                    const PipelineConfig& cfg) {
  return fit_impl(data, assumptions, cfg, nullptr);
}

FittedCace fit_cace_with_gating(const TrialDataset& data, const AssumptionSet& assumptions,
                                const GatingModel& gating, const PipelineConfig& cfg) {
  data.validate();
  StratumSet expected = assumptions.monotonicity ? StratumSet::Mono3 : StratumSet::Full4;
  if (gating.strata != expected)
    raise(ErrorCode::DomainError, "gating model does not match the assumption set");
  return fit_with_gating_impl(data, assumptions, gating, cfg, nullptr);
}

std::pair<double, double> percentile_interval(std::vector<double> samples, double level) {
  if (samples.empty()) raise(ErrorCode::DomainError, "no samples for the interval");
  if (!(level > 0.0 && level < 1.0)) raise(ErrorCode::DomainError, "level must be in (0,1)");
  std::sort(samples.begin(), samples.end());
  const double b = double(samples.size());
  auto order_stat = [&](double k) {
    double kk = std::clamp(k, 1.0, b);
    return samples[size_t(kk) - 1];
  };
  double lo = order_stat(std::floor((b + 1.0) * (1.0 - level) / 2.0));
  double hi = order_stat(std::ceil((b + 1.0) * (1.0 + level) / 2.0));
  return {lo, hi};
}

CaceEstimate bootstrap_cace(const TrialDataset& data, const AssumptionSet& assumptions,
                            const PipelineConfig& cfg, const BootstrapConfig& boot,
                            std::uint64_t seed) {
  if (boot.replicates < 1) raise(ErrorCode::DomainError, "need at least one replicate");
  data.validate();

  // the point estimate is the plain full-data fit under the caller's config
  FittedCace base = fit_cace(data, assumptions, cfg);

  const int B = boot.replicates;
  const Eigen::Index n = data.n();
  std::vector<double> results(size_t(B), std::numeric_limits<double>::quiet_NaN());
  std::vector<char> failed(size_t(B), 0);
  std::exception_ptr fatal = nullptr;

  int nthreads = boot.threads;
#ifdef _OPENMP
  if (nthreads <= 0) nthreads = omp_get_max_threads();
#pragma omp parallel for num_threads(nthreads) schedule(dynamic)
#endif
  for (int r = 0; r < B; ++r) {
    try {
      Rng rng(derive_seed(seed, {0xb007, std::uint64_t(r)}));
      std::vector<Eigen::Index> idx(static_cast<size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) idx[size_t(i)] = Eigen::Index(rng.below(std::uint64_t(n)));
      TrialDataset resample = data.subset(idx);
      PipelineConfig rcfg = cfg;
      rcfg.seed = derive_seed(seed, {0xb00f, std::uint64_t(r)});
      FittedCace fit = fit_impl(resample, assumptions, rcfg,
                                boot.warm_start ? &base : nullptr);
      results[size_t(r)] = fit.estimate.delta_hat;
    } catch (const Error&) {
      failed[size_t(r)] = 1;
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      {
        if (!fatal) fatal = std::current_exception();
      }
      failed[size_t(r)] = 1;
    }
  }
  if (fatal) std::rethrow_exception(fatal);

  BootstrapResult br;
  br.replicates = B;
  br.level = boot.level;
  for (int r = 0; r < B; ++r) {
    if (failed[size_t(r)])
      ++br.failures;
    else
      br.samples.push_back(results[size_t(r)]);
  }
  if (double(br.failures) > boot.max_failure_share * double(B))
    raise(ErrorCode::TooManyFailures,
          std::to_string(br.failures) + " of " + std::to_string(B) + " replicates failed");
  auto [lo, hi] = percentile_interval(br.samples, boot.level);
  br.ci_low = lo;
  br.ci_high = hi;

  CaceEstimate est = base.estimate;
  est.bootstrap = std::move(br);
  return est;
}

BootstrapResult bootstrap_statistic(const TrialDataset& data,
                                    const std::function<double(const TrialDataset&)>& statistic,
                                    const BootstrapConfig& boot, std::uint64_t seed) {
  if (boot.replicates < 1) raise(ErrorCode::DomainError, "need at least one replicate");
  const int B = boot.replicates;
  const Eigen::Index n = data.n();
  std::vector<double> results(size_t(B), std::numeric_limits<double>::quiet_NaN());
  std::vector<char> failed(size_t(B), 0);
  std::exception_ptr fatal = nullptr;

  int nthreads = boot.threads;
#ifdef _OPENMP
  if (nthreads <= 0) nthreads = omp_get_max_threads();
#pragma omp parallel for num_threads(nthreads) schedule(dynamic)
#endif
  for (int r = 0; r < B; ++r) {
    try {
      Rng rng(derive_seed(seed, {0xb007, std::uint64_t(r)}));
      std::vector<Eigen::Index> idx(static_cast<size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i)
        idx[size_t(i)] = Eigen::Index(rng.below(std::uint64_t(n)));
      results[size_t(r)] = statistic(data.subset(idx));
    } catch (const Error&) {
      failed[size_t(r)] = 1;
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      {
        if (!fatal) fatal = std::current_exception();
      }
      failed[size_t(r)] = 1;
    }
  }
  if (fatal) std::rethrow_exception(fatal);

  BootstrapResult br;
  br.replicates = B;
  br.level = boot.level;
  for (int r = 0; r < B; ++r) {
    if (failed[size_t(r)])
      ++br.failures;
    else
      br.samples.push_back(results[size_t(r)]);
  }
  if (double(br.failures) > boot.max_failure_share * double(B))
    raise(ErrorCode::TooManyFailures,
          std::to_string(br.failures) + " of " + std::to_string(B) + " replicates failed");
  auto [lo, hi] = percentile_interval(br.samples, boot.level);
  br.ci_low = lo;
  br.ci_high = hi;
  return br;
}

}  // namespace cacemix
