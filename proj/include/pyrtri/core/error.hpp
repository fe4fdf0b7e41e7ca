#pragma once

#include <stdexcept>
#include <string>

namespace pyrtri {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape mismatch, non-finite input, violated precondition.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite value.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, long long ray_index = -1)
      : Error(what), ray_index_(ray_index) {}
  long long ray_index() const noexcept { return ray_index_; }

 private:
  long long ray_index_;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line), detail_(what) {}
  // "file:line: what"
  ConfigError(const std::string& file, const ConfigError& inner)
      : Error(file + (inner.line_ > 0 ? ":" + std::to_string(inner.line_) : "") + ": " + inner.detail_),
        line_(inner.line_),
        detail_(inner.detail_) {}
  int line() const noexcept { return line_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  int line_;
  std::string detail_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw InvalidInput(what);
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidInput(what);
}

}  // namespace detail
}  // namespace pyrtri
