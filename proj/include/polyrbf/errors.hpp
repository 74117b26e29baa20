#pragma once

#include <stdexcept>
#include <string>

namespace polyrbf {

// Exit-code contract: 2 = invalid inputs/config, 3 = I/O failure, 1 = internal bug.
class Error : public std::runtime_error {
public:
  Error(std::string msg, int exit_code)
      : std::runtime_error(std::move(msg)), exit_code_(exit_code) {}
  int exit_code() const { return exit_code_; }

private:
  int exit_code_;
};

class ValidationError : public Error {
public:
  explicit ValidationError(std::string msg) : Error(std::move(msg), 2) {}
};

class IOError : public Error {
public:
  explicit IOError(std::string msg) : Error(std::move(msg), 3) {}
};

class InternalError : public Error {
public:
  explicit InternalError(std::string msg) : Error(std::move(msg), 1) {}
};

class RankDeficiencyError : public ValidationError {
public:
  RankDeficiencyError(std::string msg, int deficient_dims)
      : ValidationError(std::move(msg)), deficient_dims_(deficient_dims) {}
  int deficient_dims() const { return deficient_dims_; }

private:
  int deficient_dims_;
};

class ExtrapolationError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class ProtocolMismatchError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

} // namespace polyrbf
