#pragma once

#include <stdexcept>
#include <string>

namespace gapfill {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input file does not follow the expected header or layout.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// A single CSV row failed to parse; carries the 1-based line number.
class RowError : public Error {
 public:
  RowError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value (flag out of range, bad sweep grid value).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class EmptyCohortError : public Error {
 public:
  using Error::Error;
};

class DegenerateStreamError : public Error {
 public:
  DegenerateStreamError(const std::string& stream)
      : Error("stream '" + stream + "' is constant over observed entries"), stream_(stream) {}
  const std::string& stream() const noexcept { return stream_; }

 private:
  std::string stream_;
};

class UntrainableError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, const std::string& what)
      : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gapfill
