#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace nwa {

// Base of every error the library throws. `kind()` is a stable short tag used
// by the CLI in its machine-readable error records.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& message) : Error("dimension", message) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& message) : Error("domain", message) {}
};

class ConfigurationError : public Error {
 public:
  explicit ConfigurationError(const std::string& message) : Error("configuration", message) {}
};

class SingularSystemError : public Error {
 public:
  explicit SingularSystemError(const std::string& message) : Error("singular", message) {}
};

class DesignError : public Error {
 public:
  explicit DesignError(const std::string& message) : Error("design", message) {}
};

class UnsupportedModelError : public Error {
 public:
  explicit UnsupportedModelError(const std::string& message) : Error("unsupported_model", message) {}
};

// Root finder ran out of iterations. Carries the iterate with the smallest
// residual norm seen so callers can inspect or report it.
class NonconvergenceError : public Error {
 public:
  NonconvergenceError(const std::string& message, Eigen::VectorXd best_iterate, double best_residual,
                      int iterations)
      : Error("nonconvergence", message),
        best_iterate_(std::move(best_iterate)),
        best_residual_(best_residual),
        iterations_(iterations) {}

  const Eigen::VectorXd& best_iterate() const noexcept { return best_iterate_; }
  double best_residual() const noexcept { return best_residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  Eigen::VectorXd best_iterate_;
  double best_residual_;
  int iterations_;
};

class SeparationError : public Error {
 public:
  explicit SeparationError(const std::string& message) : Error("separation", message) {}
};

// Input file violates the dataset contract. `row` is 1-based over data rows
// (header excluded); 0 when the problem is not tied to a row.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& message, long row = 0) : Error("schema", message), row_(row) {}
  long row() const noexcept { return row_; }

 private:
  long row_;
};

}  // namespace nwa
