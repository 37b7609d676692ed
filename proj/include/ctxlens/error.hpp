#pragma once

#include <stdexcept>
#include <string>

namespace ctxlens {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int { ok = 0, usage = 1, backend = 2, data = 3 };

/// Base of every error raised by the library. Carries the exit code a
/// command should terminate with when the error escapes.
class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Invalid parameters: bad strategy token, k < 1, p outside (0,1], ...
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::usage, what) {}
};

/// Two distributions (or a distribution and a token id) disagree on vocabulary.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ExitCode::data, what) {}
};

/// Malformed or insufficient input data.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::data, what) {}
};

class InsufficientDataError : public DataError {
 public:
  explicit InsufficientDataError(const std::string& what = "insufficient data")
      : DataError(what) {}
};

/// Request was rejected before reaching the model (e.g. token id out of range).
class RequestError : public Error {
 public:
  explicit RequestError(const std::string& what) : Error(ExitCode::data, what) {}
};

/// Backend unreachable, timed out, or returned garbage.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int attempts)
      : Error(ExitCode::backend, what), attempts_(attempts) {}
  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

}  // namespace ctxlens
