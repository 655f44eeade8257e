#pragma once

#include <stdexcept>
#include <string>

namespace cacemix {

enum class ErrorCode {
  NonFinite,
  SingularSystem,
  NonBinary,
  DegenerateData,
  EmptySubset,
  LearnerContractViolation,
  PositivityViolation,
  ComplierExpertUntrained,
  ZeroDenominator,
  NoValidGroups,
  TooManyFailures,
  DomainError,
  SchemaViolation,
};

const char* error_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const { return code_; }
  const char* name() const { return error_name(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace cacemix
