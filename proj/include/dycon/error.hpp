#pragma once

#include <stdexcept>
#include <string>

namespace dycon {

// All library failures derive from Error so callers can map them to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Hyperparameter or argument outside its documented domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Caller broke a precondition (shape mismatch, missing cache, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class CorruptFileError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during optimisation.
class DivergedError : public Error {
 public:
  using Error::Error;
};

}  // namespace dycon
