#pragma once

#include <stdexcept>
#include <string>

namespace ncap {

// Argument outside the mathematical domain of an operation (tau <= 0, NaN, label out of range).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Operand dimensions do not chain.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid or incomplete configuration (missing teacher, odd embed, bad config file).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Correlation requested on a constant series.
class UndefinedCorrelation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Unreadable, truncated or mismatched checkpoint file.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss or parameter.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ncap
