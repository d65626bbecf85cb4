#pragma once

#include <stdexcept>
#include <string>

namespace rydemit {

// All library errors derive from this so callers can catch one type.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad or inconsistent configuration / input values.
struct ConfigError : Error {
  using Error::Error;
};

// Polynomial fit evaluated outside its window, or a fit that failed.
struct FitError : Error {
  using Error::Error;
};

// Requested quantity undefined in the state's current frame.
struct FrameError : Error {
  using Error::Error;
};

// Degenerate dressed pair: the effective two-level reduction is invalid.
struct DegenerateError : Error {
  using Error::Error;
};

// Vanishing energy denominator in an adiabatic-elimination coupling.
struct SingularError : Error {
  using Error::Error;
};

// Step size collapsed or step budget exhausted in the integrator.
struct StiffnessError : Error {
  using Error::Error;
};

// Sample grouping that does not divide evenly, index out of range, etc.
struct UsageError : Error {
  using Error::Error;
};

}  // namespace rydemit
