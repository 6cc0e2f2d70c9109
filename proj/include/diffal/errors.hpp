#pragma once

#include <stdexcept>
#include <string>

namespace diffal {

// Invalid parameters or configuration. The CLI maps these to exit code 1.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed EMB1/MLP1 payloads.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension mismatch between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A class cannot supply the requested number of labeled points.
class InfeasibleDrawError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unlabeled nodes with no path to any labeled node.
class SingularSystemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonConvergenceError : public std::runtime_error {
 public:
  NonConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class InsufficientPoolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace diffal
