#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hetseg {

/// Failure category. Each maps onto one CLI exit code.
enum class ErrorKind {
  config = 2,
  data = 3,
  divergence = 4,
  missing_stage = 5,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

/// Invalid arguments, shapes or schema. Carries every problem found, not just the first.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  explicit ConfigError(const std::string& problem) : ConfigError(std::vector<std::string>{problem}) {}
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Malformed files, shape mismatches between tensors and their declared specs.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Tensor shape disagrees with the network or domain it is passed to.
class ShapeError : public DataError {
 public:
  explicit ShapeError(const std::string& what) : DataError(what) {}
};

/// A loss term became non-finite during training.
class DivergenceError : public Error {
 public:
  DivergenceError(std::string term, long iteration);
  const std::string& term() const noexcept { return term_; }
  long iteration() const noexcept { return iteration_; }

 private:
  std::string term_;
  long iteration_;
};

/// A pipeline stage was invoked before the stage that produces its inputs.
class MissingStageError : public Error {
 public:
  explicit MissingStageError(const std::string& what) : Error(ErrorKind::missing_stage, what) {}
};

}  // namespace hetseg
