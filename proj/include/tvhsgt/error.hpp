#ifndef TVHSGT_ERROR_HPP
#define TVHSGT_ERROR_HPP

#include <stdexcept>
#include <string>

namespace tvhsgt {

/// Process exit codes used by the command line tool.
enum class ExitCode : int {
  ok = 0,
  failure = 1,
  config = 2,
  ingestion = 3,
  divergence = 4,
  certificate = 5,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::failure)
      : std::runtime_error(what), code_(code) {}
  ExitCode exit_code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Invalid configuration or violated precondition on user-provided settings.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, ExitCode::config) {}
};

/// Malformed or inconsistent data file. Line and column are 1-based, 0 if unknown.
class IngestionError : public Error {
 public:
  IngestionError(const std::string& what, std::size_t line = 0, std::size_t col = 0)
      : Error(format(what, line, col), ExitCode::ingestion), line_(line), col_(col) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return col_; }

 private:
  static std::string format(const std::string& what, std::size_t line, std::size_t col) {
    if (line == 0) return what;
    std::string s = what + " (line " + std::to_string(line);
    if (col != 0) s += ", col " + std::to_string(col);
    return s + ")";
  }
  std::size_t line_;
  std::size_t col_;
};

/// A non-finite coordinate appeared in an agent's state.
class DivergenceError : public Error {
 public:
  DivergenceError(int agent, long round)
      : Error("non-finite state at agent " + std::to_string(agent) + ", round " +
                  std::to_string(round),
              ExitCode::divergence),
        agent_(agent),
        round_(round) {}
  int agent() const noexcept { return agent_; }
  long round() const noexcept { return round_; }

 private:
  int agent_;
  long round_;
};

/// Stability-certificate construction failed or is internally inconsistent.
class CertificateError : public Error {
 public:
  explicit CertificateError(const std::string& what) : Error(what, ExitCode::certificate) {}
};

/// Iterative numerical procedure (power iteration, inner solver) did not converge.
class AnalysisError : public Error {
 public:
  AnalysisError(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Diagnostic computation could not be completed (window exhausted, too few replicas).
class DiagnosticsError : public Error {
 public:
  explicit DiagnosticsError(const std::string& what, double achieved = 0.0)
      : Error(what), achieved_(achieved) {}
  double achieved() const noexcept { return achieved_; }

 private:
  double achieved_;
};

class StreamError : public Error {
 public:
  explicit StreamError(const std::string& what) : Error(what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(what) {}
};

}  // namespace tvhsgt

#endif  // TVHSGT_ERROR_HPP
