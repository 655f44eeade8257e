#include "cacemix/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace cacemix {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_double(const std::string& s, const std::string& context) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) raise(ErrorCode::SchemaViolation, "trailing characters in " + context);
    return v;
  } catch (const Error&) {
    throw;
  } catch (...) {
    raise(ErrorCode::SchemaViolation, "cannot parse '" + s + "' in " + context);
  }
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string spec_label(Specification s) {
  return s == Specification::Well ? "well" : "mis";
}

}  // namespace

TrialDataset read_trial_csv(const std::string& path, const std::vector<std::string>& covariates) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::SchemaViolation, "cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) raise(ErrorCode::SchemaViolation, "empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header = split_csv_line(line);

  auto find_col = [&](const std::string& name) -> int {
    int found = -1;
    for (size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) {
        if (found >= 0) raise(ErrorCode::SchemaViolation, "duplicate column " + name);
        found = int(j);
      }
    }
    return found;
  };

  int zc = find_col("z"), tc = find_col("t"), yc = find_col("y");
  if (zc < 0 || tc < 0 || yc < 0)
    raise(ErrorCode::SchemaViolation, "header must contain z, t and y");

  std::vector<int> cov_idx;
  std::vector<std::string> cov_names;
  if (covariates.empty()) {
    for (size_t j = 0; j < header.size(); ++j) {
      if (int(j) == zc || int(j) == tc || int(j) == yc) continue;
      cov_idx.push_back(int(j));
      cov_names.push_back(header[j]);
    }
  } else {
    for (const std::string& name : covariates) {
      int j = find_col(name);
      if (j < 0) raise(ErrorCode::SchemaViolation, "covariate column not found: " + name);
      if (j == zc || j == tc || j == yc)
        raise(ErrorCode::SchemaViolation, "covariate list may not include z/t/y");
      cov_idx.push_back(j);
      cov_names.push_back(name);
    }
  }

  std::vector<std::vector<double>> rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size())
      raise(ErrorCode::SchemaViolation,
            "line " + std::to_string(lineno) + " has " + std::to_string(fields.size()) +
                " fields, expected " + std::to_string(header.size()));
    std::vector<double> row(fields.size());
    for (size_t j = 0; j < fields.size(); ++j)
      row[j] = parse_double(fields[j], "line " + std::to_string(lineno));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) raise(ErrorCode::SchemaViolation, "no data rows in " + path);

  const Eigen::Index n = Eigen::Index(rows.size());
  TrialDataset data;
  data.z.resize(n);
  data.t.resize(n);
  data.y.resize(n);
  Eigen::MatrixXd cov(n, Eigen::Index(cov_idx.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[size_t(i)];
    data.z[i] = row[size_t(zc)];
    data.t[i] = row[size_t(tc)];
    data.y[i] = row[size_t(yc)];
    if ((data.z[i] != 0.0 && data.z[i] != 1.0) || (data.t[i] != 0.0 && data.t[i] != 1.0))
      raise(ErrorCode::SchemaViolation, "z and t must be strictly 0/1");
    for (size_t c = 0; c < cov_idx.size(); ++c) cov(i, Eigen::Index(c)) = row[size_t(cov_idx[c])];
  }
  if (!cov.allFinite() || !data.y.allFinite())
    raise(ErrorCode::SchemaViolation, "non-finite values in " + path);

  data.X = with_intercept(cov);
  data.columns.push_back("(intercept)");
  for (const auto& name : cov_names) data.columns.push_back(name);
  return data;
}

void write_trial_csv(const std::string& path, const TrialDataset& data) {
  std::ofstream out(path);
  if (!out) raise(ErrorCode::DomainError, "cannot write " + path);
  out << "z,t,y";
  for (size_t j = 1; j < data.columns.size(); ++j) out << "," << data.columns[j];
  out << "\n";
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    out << int(data.z[i]) << "," << int(data.t[i]) << "," << fmt17(data.y[i]);
    for (Eigen::Index j = 1; j < data.cols(); ++j) out << "," << fmt17(data.X(i, j));
    out << "\n";
  }
}

void write_study_csv(const std::string& path, const StudyReport& report,
                     const std::string& manifest_ref) {
  std::ofstream out(path);
  if (!out) raise(ErrorCode::DomainError, "cannot write " + path);
  out << "# manifest: " << manifest_ref << "\n";
  out << "scenario,spec,n,estimator,bias_pct,se_pct,rmse_pct,failures\n";
  char buf[256];
  for (const StudyCell& cell : report.cells) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%d,%s,%.10g,%.10g,%.10g,%d\n", int(cell.scenario),
                  spec_label(cell.spec).c_str(), cell.n,
                  estimator_kind_label(cell.estimator).c_str(), cell.bias_pct, cell.se_pct,
                  cell.rmse_pct, cell.failures);
    out << buf;
  }
}

std::string study_json(const StudyReport& report, const std::string& manifest_ref) {
  nlohmann::json j;
  j["manifest"] = manifest_ref;
  j["cells"] = nlohmann::json::array();
  for (const StudyCell& cell : report.cells) {
    nlohmann::json c;
    c["scenario"] = int(cell.scenario);
    c["spec"] = spec_label(cell.spec);
    c["n"] = cell.n;
    c["estimator"] = estimator_kind_label(cell.estimator);
    c["bias_pct"] = cell.bias_pct;
    c["se_pct"] = cell.se_pct;
    c["rmse_pct"] = cell.rmse_pct;
    c["failures"] = cell.failures;
    c["true_delta"] = cell.true_delta;
    c["estimates"] = cell.estimates;
    j["cells"].push_back(std::move(c));
  }
  return j.dump(2) + "\n";
}

std::string estimates_json(const std::vector<std::pair<std::string, CaceEstimate>>& estimates,
                           const std::string& manifest_ref) {
  nlohmann::json j;
  j["manifest"] = manifest_ref;
  j["estimates"] = nlohmann::json::array();
  for (const auto& [label, est] : estimates) {
    nlohmann::json e;
    e["estimator"] = label;
    e["delta_hat"] = est.delta_hat;
    e["n"] = est.n;
    if (label.rfind("pi", 0) == 0) {
      e["assumptions"] = {{"exclusion_restriction", est.assumptions.exclusion_restriction},
                          {"monotonicity", est.assumptions.monotonicity}};
    }
    if (est.bootstrap) {
      const BootstrapResult& b = *est.bootstrap;
      e["bootstrap"] = {{"replicates", b.replicates}, {"failures", b.failures},
                        {"level", b.level},           {"ci_low", b.ci_low},
                        {"ci_high", b.ci_high},       {"samples", b.samples}};
    }
    j["estimates"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::DomainError, "cannot write " + path);
  out << content;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::DomainError, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace cacemix
