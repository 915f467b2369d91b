#pragma once

#include <stdexcept>
#include <string>

namespace dmwa {

// Base for every error raised by the library. Subclasses name the failure
// category so callers (and tests) can dispatch on it.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class RankError : public Error {
 public:
  using Error::Error;
};

class NormalizationError : public Error {
 public:
  using Error::Error;
};

class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SplitViolationError : public Error {
 public:
  using Error::Error;
};

class NoNegativeError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, long long offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  long long offset() const { return offset_; }

 private:
  long long offset_;
};

class UnsupportedVersionError : public FormatError {
 public:
  UnsupportedVersionError(unsigned version, long long offset)
      : FormatError("unsupported format version " + std::to_string(version),
                    offset),
        version_(version) {}

  unsigned version() const { return version_; }

 private:
  unsigned version_;
};

}  // namespace dmwa
