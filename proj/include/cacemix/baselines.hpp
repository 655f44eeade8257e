#pragma once

#include <Eigen/Dense>

#include "cacemix/errors.hpp"

namespace cacemix {

/// [mean(Y|Z=1) - mean(Y|Z=0)] / [mean(T|Z=1) - mean(T|Z=0)].
/// EmptySubset if an arm is empty; ZeroDenominator on instrument irrelevance.
double wald_estimator(const Eigen::VectorXd& z, const Eigen::VectorXd& t,
                      const Eigen::VectorXd& y);

struct MatchingConfig {
  int n_groups = 5;
  int min_group_size = 1;
};

struct MatchingResult {
  double estimate = 0.0;
  int groups_used = 0;
  int groups_dropped = 0;
};

/// Grouped IV estimator: quantile bins of eta_hat, within-cell arm means,
/// group-size-weighted signed sums. Groups missing an arm (or below
/// min_group_size per arm) are dropped. Constant eta_hat collapses to a single
/// group, where the formula reduces exactly to the Wald ratio.
MatchingResult iv_matching_estimator(const Eigen::VectorXd& z, const Eigen::VectorXd& t,
                                     const Eigen::VectorXd& y, const Eigen::VectorXd& eta_hat,
                                     const MatchingConfig& cfg = {});

}  // namespace cacemix
