#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fpslab {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent or out-of-range configuration (dimension mismatch, negative
// noise, bad partition request, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Experiment file violates the schema; path names the field, e.g.
// "channel.noise_std".
class SchemaError : public ConfigError {
 public:
  SchemaError(const std::string& path, const std::string& what)
      : ConfigError(path + ": " + what), path_(path) {}

  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Caller handed an operation something it cannot act on (empty batch, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Sketches with different shapes or hash seeds cannot be combined.
class MergeError : public Error {
 public:
  using Error::Error;
};

class ChannelError : public Error {
 public:
  using Error::Error;
};

// Input outside the domain of a diagnostic (e.g. soft sparsity of zero).
class UndefinedInputError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

}  // namespace fpslab
