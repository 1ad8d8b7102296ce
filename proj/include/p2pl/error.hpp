#ifndef P2PL_ERROR_HPP
#define P2PL_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace p2pl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  /// Short machine-readable code, used for error-coded CSV rows.
  virtual const char* code() const noexcept { return "error"; }
};

class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }
  const char* code() const noexcept override { return "parse_error"; }

 private:
  std::size_t line_;
};

class SingularSystem : public Error {
 public:
  explicit SingularSystem(const std::string& what, int iteration = -1)
      : Error(iteration >= 0 ? what + " (iteration " + std::to_string(iteration) + ")" : what),
        iteration_(iteration) {}
  /// Accumulation iteration (1-based) at which the solve failed, -1 when unknown.
  int iteration() const noexcept { return iteration_; }
  const char* code() const noexcept override { return "singular_system"; }

 private:
  int iteration_;
};

class SingularHessian : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "singular_hessian"; }
};

class DegenerateConfiguration : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "degenerate_configuration"; }
};

class InsufficientPoints : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "insufficient_points"; }
};

class MissingNormals : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "missing_normals"; }
};

}  // namespace p2pl

#endif  // P2PL_ERROR_HPP
