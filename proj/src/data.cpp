#include "cacemix/data.hpp"

namespace cacemix {

namespace {

bool is_binary(const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v[i] != 0.0 && v[i] != 1.0) return false;
  return true;
}

const char* error_names[] = {
    "NonFinite",
    "SingularSystem",
    "NonBinary",
    "DegenerateData",
    "EmptySubset",
    "LearnerContractViolation",
    "PositivityViolation",
    "ComplierExpertUntrained",
    "ZeroDenominator",
    "NoValidGroups",
    "TooManyFailures",
    "DomainError",
    "SchemaViolation",
};

}  // namespace

const char* error_name(ErrorCode code) { return error_names[static_cast<int>(code)]; }

void TrialDataset::validate() const {
  if (n() == 0) raise(ErrorCode::EmptySubset, "dataset has no rows");
  if (z.size() != n() || t.size() != n() || y.size() != n())
    raise(ErrorCode::DomainError, "dataset columns have mismatched lengths");
  if (!is_binary(z) || !is_binary(t))
    raise(ErrorCode::NonBinary, "z and t must be strictly 0/1");
  if (!X.allFinite() || !y.allFinite())
    raise(ErrorCode::NonFinite, "dataset contains NaN or Inf");
}

TrialDataset TrialDataset::subset(const std::vector<Eigen::Index>& rows) const {
  TrialDataset out;
  out.columns = columns;
  out.X.resize(Eigen::Index(rows.size()), X.cols());
  out.z.resize(rows.size());
  out.t.resize(rows.size());
  out.y.resize(rows.size());
  for (Eigen::Index i = 0; i < Eigen::Index(rows.size()); ++i) {
    Eigen::Index r = rows[size_t(i)];
    out.X.row(i) = X.row(r);
    out.z[i] = z[r];
    out.t[i] = t[r];
    out.y[i] = y[r];
  }
  return out;
}

std::vector<Eigen::Index> TrialDataset::rows_where_zt(int zval, int tval) const {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < n(); ++i)
    if (z[i] == double(zval) && t[i] == double(tval)) rows.push_back(i);
  return rows;
}

std::vector<Eigen::Index> TrialDataset::rows_where_t(int tval) const {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < n(); ++i)
    if (t[i] == double(tval)) rows.push_back(i);
  return rows;
}

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& covariates) {
  Eigen::MatrixXd X(covariates.rows(), covariates.cols() + 1);
  X.col(0).setOnes();
  X.rightCols(covariates.cols()) = covariates;
  return X;
}

}  // namespace cacemix
