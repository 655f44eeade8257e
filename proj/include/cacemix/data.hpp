#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cacemix/errors.hpp"

namespace cacemix {

/// One randomized trial: design matrix X (column 0 is the intercept),
/// assignment z, treatment taken t, outcome y.
struct TrialDataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd z;
  Eigen::VectorXd t;
  Eigen::VectorXd y;
  std::vector<std::string> columns;  // names of X's columns

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index cols() const { return X.cols(); }

  /// NonBinary unless z and t are exactly 0/1; NonFinite unless X and y are finite.
  void validate() const;

  TrialDataset subset(const std::vector<Eigen::Index>& rows) const;
  std::vector<Eigen::Index> rows_where_zt(int zval, int tval) const;
  std::vector<Eigen::Index> rows_where_t(int tval) const;
};

/// Prepend an intercept column of ones.
Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& covariates);

}  // namespace cacemix
