#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cacemix/data.hpp"
#include "cacemix/estimators.hpp"
#include "cacemix/simgen.hpp"

namespace cacemix {

/// Read a trial CSV: header row with lowercase `z`, `t`, `y` plus covariate
/// columns; z and t must be strictly 0/1. An intercept column is prepended.
/// `covariates` selects and orders covariate columns; empty = all, header order.
/// SchemaViolation on malformed input.
TrialDataset read_trial_csv(const std::string& path,
                            const std::vector<std::string>& covariates = {});

void write_trial_csv(const std::string& path, const TrialDataset& data);

void write_study_csv(const std::string& path, const StudyReport& report,
                     const std::string& manifest_ref);

std::string study_json(const StudyReport& report, const std::string& manifest_ref);

std::string estimates_json(const std::vector<std::pair<std::string, CaceEstimate>>& estimates,
                           const std::string& manifest_ref);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace cacemix
