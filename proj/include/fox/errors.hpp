#ifndef FOX_ERRORS_HPP_
#define FOX_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace fox {

// All library failures derive from fox::Error so callers (the CLI in
// particular) can report them uniformly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

// A softmax row with no admissible (non-masked) entry.
class DegenerateRowError : public DomainError {
 public:
  using DomainError::DomainError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Raised by the trainer on a non-finite loss or gradient.
class TrainingFault : public Error {
 public:
  using Error::Error;
};

}  // namespace fox

#endif  // FOX_ERRORS_HPP_
