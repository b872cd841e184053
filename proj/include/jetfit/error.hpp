#ifndef JETFIT_ERROR_HPP
#define JETFIT_ERROR_HPP

#include <stdexcept>
#include <string>

namespace jetfit {

/// Base class for all jetfit runtime failures.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Neighborhood covariance is rank-deficient (collinear or too few points);
/// no tangent frame can be built.
struct DegenerateFrameError : Error {
  using Error::Error;
};

/// The damped weighted normal equations could not be solved (factorization
/// failure, non-finite solution, or fewer effective points than coefficients).
struct SingularFitError : Error {
  using Error::Error;
};

/// File- or format-level failure. Carries a 1-based line (and column when
/// known) of the offending input; 0 means not applicable.
struct IoError : Error {
  IoError(const std::string& msg, std::size_t line = 0, std::size_t column = 0)
      : Error(format(msg, line, column)), line(line), column(column) {}

  std::size_t line = 0;
  std::size_t column = 0;

 private:
  static std::string format(const std::string& msg, std::size_t line, std::size_t column) {
    std::string out = msg;
    if (line > 0) {
      out += " (line " + std::to_string(line);
      if (column > 0) out += ", column " + std::to_string(column);
      out += ")";
    }
    return out;
  }
};

}  // namespace jetfit

#endif  // JETFIT_ERROR_HPP
