#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ragner {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid manifest, flag combination or fixture. Maps to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class LabelError : public Error {
 public:
  LabelError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ScoringError : public Error {
 public:
  using Error::Error;
};

class EmbeddingError : public Error {
 public:
  EmbeddingError(const std::string& what, int status = 0) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

/// Retries exhausted or a non-retryable HTTP status.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int last_status) : Error(what), last_status_(last_status) {}
  int last_status() const noexcept { return last_status_; }

 private:
  int last_status_;
};

/// Well-formed HTTP exchange whose body does not follow the chat schema.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class EvalError : public Error {
 public:
  using Error::Error;
};

class ReportError : public Error {
 public:
  using Error::Error;
};

}  // namespace ragner
