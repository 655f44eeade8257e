#include "cacemix/baselines.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace cacemix {

namespace {

struct ArmMeans {
  double y1 = 0.0, y0 = 0.0, t1 = 0.0, t0 = 0.0;
  Eigen::Index n1 = 0, n0 = 0;
};

ArmMeans arm_means(const Eigen::VectorXd& z, const Eigen::VectorXd& t, const Eigen::VectorXd& y,
                   const std::vector<Eigen::Index>& rows) {
  ArmMeans m;
  for (Eigen::Index i : rows) {
    if (z[i] == 1.0) {
      m.y1 += y[i];
      m.t1 += t[i];
      ++m.n1;
    } else {
      m.y0 += y[i];
      m.t0 += t[i];
      ++m.n0;
    }
  }
  if (m.n1 > 0) {
    m.y1 /= double(m.n1);
    m.t1 /= double(m.n1);
  }
  if (m.n0 > 0) {
    m.y0 /= double(m.n0);
    m.t0 /= double(m.n0);
  }
  return m;
}

}  // namespace

double wald_estimator(const Eigen::VectorXd& z, const Eigen::VectorXd& t,
                      const Eigen::VectorXd& y) {
  if (z.size() != t.size() || z.size() != y.size())
    raise(ErrorCode::DomainError, "wald_estimator: size mismatch");
  std::vector<Eigen::Index> all(static_cast<size_t>(z.size()));
  std::iota(all.begin(), all.end(), 0);
  ArmMeans m = arm_means(z, t, y, all);
  if (m.n1 == 0 || m.n0 == 0) raise(ErrorCode::EmptySubset, "an assignment arm is empty");
  double denom = m.t1 - m.t0;
  if (std::abs(denom) < 1e-12)
    raise(ErrorCode::ZeroDenominator, "first-stage compliance difference is zero");
  return (m.y1 - m.y0) / denom;
}

MatchingResult iv_matching_estimator(const Eigen::VectorXd& z, const Eigen::VectorXd& t,
                                     const Eigen::VectorXd& y, const Eigen::VectorXd& eta_hat,
                                     const MatchingConfig& cfg) {
  const Eigen::Index n = z.size();
  if (t.size() != n || y.size() != n || eta_hat.size() != n)
    raise(ErrorCode::DomainError, "iv_matching_estimator: size mismatch");
  if (cfg.n_groups < 1) raise(ErrorCode::DomainError, "n_groups must be >= 1");

  // constant eta collapses matching to a single group (and thus to Wald)
  int groups = cfg.n_groups;
  if (eta_hat.maxCoeff() - eta_hat.minCoeff() < 1e-12) groups = 1;

  std::vector<Eigen::Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return eta_hat[a] < eta_hat[b]; });

  MatchingResult res;
  double num = 0.0, den = 0.0, weight_sum = 0.0;
  for (int j = 0; j < groups; ++j) {
    Eigen::Index lo = Eigen::Index(std::int64_t(n) * j / groups);
    Eigen::Index hi = Eigen::Index(std::int64_t(n) * (j + 1) / groups);
    std::vector<Eigen::Index> rows(order.begin() + lo, order.begin() + hi);
    ArmMeans m = arm_means(z, t, y, rows);
    if (m.n1 < cfg.min_group_size || m.n0 < cfg.min_group_size) {
      ++res.groups_dropped;
      continue;
    }
    double w = double(m.n1 + m.n0);  // cell-size weighting of the group sums
    num += w * (m.y1 - m.y0);
    den += w * (m.t1 - m.t0);
    weight_sum += w;
    ++res.groups_used;
  }
  if (res.groups_used == 0) raise(ErrorCode::NoValidGroups, "every group was dropped");
  num /= weight_sum;
  den /= weight_sum;
  if (std::abs(den) < 1e-12)
    raise(ErrorCode::ZeroDenominator, "group-summed compliance difference is zero");
  res.estimate = num / den;
  return res;
}

}  // namespace cacemix
