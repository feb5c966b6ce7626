#pragma once

#include <iostream>
#include <stdexcept>
#include <string>

namespace controlcol {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied something structurally invalid: bad config, out-of-range
// index, mismatched shapes. The CLI maps these to the usage exit code.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// A file could not be read, written or decoded. Carries the offending path.
class IoError : public Error {
 public:
  IoError(std::string path, const std::string& what)
      : Error(what + ": " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class DecodeError : public IoError {
 public:
  using IoError::IoError;
};

// Numerical failure (non-convergent decomposition, indefinite matrix, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

// External scorer or backend process failed.
class ProcessError : public Error {
 public:
  using Error::Error;
};

// Wraps a failure inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

namespace log {

inline void warn(const std::string& msg) { std::cerr << "controlcol: warning: " << msg << '\n'; }

}  // namespace log

}  // namespace controlcol
