#include "hetseg/error.hpp"

#include <sstream>

namespace hetseg {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
      return "config";
    case ErrorKind::data:
      return "data";
    case ErrorKind::divergence:
      return "divergence";
    case ErrorKind::missing_stage:
      return "missing_stage";
  }
  return "unknown";
}

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::ostringstream out;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    if (i != 0) out << "; ";
    out << problems[i];
  }
  return out.str();
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error(ErrorKind::config, join_problems(problems)), problems_(std::move(problems)) {}

DivergenceError::DivergenceError(std::string term, long iteration)
    : Error(ErrorKind::divergence,
            "non-finite loss term '" + term + "' at iteration " + std::to_string(iteration)),
      term_(std::move(term)),
      iteration_(iteration) {}

}  // namespace hetseg
