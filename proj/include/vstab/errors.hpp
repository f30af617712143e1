#pragma once

#include <stdexcept>
#include <string>

namespace vstab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : Error {
  std::size_t line;
  ParseError(std::size_t line_no, const std::string& what)
      : Error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}
};

struct ValidationError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct SingularError : Error { using Error::Error; };
struct DegenerateLoadError : Error { using Error::Error; };
struct IllPosedBusError : Error { using Error::Error; };
struct InfeasibleCircleError : Error { using Error::Error; };
struct NormalizationError : Error { using Error::Error; };
struct ConditioningError : Error { using Error::Error; };
struct TraceError : Error { using Error::Error; };

// wraps a module error with the harness step that raised it
struct ScenarioError : Error {
  std::string step;
  ScenarioError(std::string step_name, const std::string& what)
      : Error(step_name + ": " + what), step(std::move(step_name)) {}
};

}  // namespace vstab
