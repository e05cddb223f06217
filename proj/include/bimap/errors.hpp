#pragma once

#include <stdexcept>
#include <string>

namespace bimap {

/// Malformed input document (JSON syntax, missing or mistyped fields).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Well-formed input that violates a model constraint.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Iterative solver failure or non-finite numerical state.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, double residual = 0.0)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, long epoch)
      : std::runtime_error(what), epoch_(epoch) {}
  long epoch() const { return epoch_; }

 private:
  long epoch_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Simulation produced a non-finite state; carries the last valid log index.
class SimulationError : public NumericalError {
 public:
  SimulationError(const std::string& what, long last_valid_index)
      : NumericalError(what), last_valid_index_(last_valid_index) {}
  long last_valid_index() const { return last_valid_index_; }

 private:
  long last_valid_index_;
};

}  // namespace bimap
