#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gecadapt {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. `line` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class SubsetTooSmall : public Error {
 public:
  SubsetTooSmall(const std::string& key, std::size_t actual, std::size_t required)
      : Error("subset " + key + " has " + std::to_string(actual) + " sentences, " +
              std::to_string(required) + " required"),
        key_(key),
        actual_(actual),
        required_(required) {}
  const std::string& key() const noexcept { return key_; }
  std::size_t actual() const noexcept { return actual_; }
  std::size_t required() const noexcept { return required_; }

 private:
  std::string key_;
  std::size_t actual_;
  std::size_t required_;
};

class InsufficientData : public Error {
 public:
  InsufficientData(std::size_t shortfall, const std::string& what)
      : Error(what + " (short by " + std::to_string(shortfall) + ")"), shortfall_(shortfall) {}
  std::size_t shortfall() const noexcept { return shortfall_; }

 private:
  std::size_t shortfall_;
};

class StatisticError : public Error {
 public:
  using Error::Error;
};

// Training diverged (non-finite loss or gradient).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace gecadapt
