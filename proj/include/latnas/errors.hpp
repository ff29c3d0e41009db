#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace latnas {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A digit of an encoding is outside its range or off its grid.
class InvalidEncoding : public Error {
 public:
  InvalidEncoding(std::size_t digit, const std::string& reason)
      : Error("invalid encoding at digit " + std::to_string(digit) + ": " + reason), digit_(digit) {}
  std::size_t digit() const noexcept { return digit_; }

 private:
  std::size_t digit_;
};

/// An architecture cannot be expressed as an encoding (non-uniform stage, off-grid value).
class NotRepresentable : public Error {
 public:
  using Error::Error;
};

class UnsupportedDimension : public Error {
 public:
  using Error::Error;
};

class MissingEntry : public Error {
 public:
  explicit MissingEntry(std::string key)
      : Error("latency table has no entry for " + key), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class BackendFailure : public Error {
 public:
  BackendFailure(std::string key, const std::string& cause)
      : Error("benchmark failed for " + key + ": " + cause), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Line-numbered failure while reading a text file.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& reason)
      : Error("line " + std::to_string(line) + ": " + reason), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DuplicateKey : public ParseError {
 public:
  DuplicateKey(std::size_t line, const std::string& key)
      : ParseError(line, "duplicate key " + key) {}
};

/// No bucket-feasible candidate was found within the rejection budget.
class ExhaustedRegion : public Error {
 public:
  using Error::Error;
};

class DegenerateSplit : public Error {
 public:
  using Error::Error;
};

class SingularKernel : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class CorruptSnapshot : public Error {
 public:
  using Error::Error;
};

}  // namespace latnas
