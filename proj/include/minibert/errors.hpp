#pragma once

#include <stdexcept>
#include <string>

namespace minibert {

// Base of every error raised by the library. The CLI maps the subclasses
// onto exit codes (2 input/path, 3 data parse, 4 runtime/numeric).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes of operands do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Integer index (token id, label, position) outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameter or selector value.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Caller broke an API contract (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Bad or insufficient input data, missing paths.
class InputError : public Error {
 public:
  using Error::Error;
};

// Malformed data file. Carries the file and line when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::string file = {}, std::size_t line = 0)
      : Error(line > 0 ? file + ":" + std::to_string(line) + ": " + message
                       : (file.empty() ? message : file + ": " + message)),
        file_(std::move(file)),
        line_(line) {}

  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

// A record parsed but violates a value constraint (e.g. score outside [-1,1]).
class ValidationError : public ParseError {
 public:
  using ParseError::ParseError;
};

// Learning-rate schedule queried outside [0, T].
class ScheduleError : public Error {
 public:
  using Error::Error;
};

class CorruptCheckpointError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersionError : public CorruptCheckpointError {
 public:
  using CorruptCheckpointError::CorruptCheckpointError;
};

// Training produced a non-finite loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace minibert
