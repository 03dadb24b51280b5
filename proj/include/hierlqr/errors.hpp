#pragma once

#include <stdexcept>
#include <string>

namespace hierlqr {

// Base for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class SymmetryError : public Error {
 public:
  using Error::Error;
};

// A closed loop (or a matrix handed to a Lyapunov solve) is not Schur stable.
class InstabilityError : public Error {
 public:
  InstabilityError(const std::string& what, double spectral_radius)
      : Error(what + " (spectral radius " + std::to_string(spectral_radius) + ")"),
        spectral_radius_(spectral_radius) {}

  double spectral_radius() const { return spectral_radius_; }

 private:
  double spectral_radius_;
};

class NotStabilizableError : public Error {
 public:
  using Error::Error;
};

// A matrix required to be positive (semi-)definite is not.
class AssumptionError : public Error {
 public:
  AssumptionError(const std::string& matrix_name, double min_eigenvalue)
      : Error("matrix " + matrix_name + " is not positive semi-definite (min eigenvalue " +
              std::to_string(min_eigenvalue) + ")"),
        matrix_name_(matrix_name) {}

  const std::string& matrix_name() const { return matrix_name_; }

 private:
  std::string matrix_name_;
};

// Two algebraically equal quantities disagree beyond tolerance.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace hierlqr
