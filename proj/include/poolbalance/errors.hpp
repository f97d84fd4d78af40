#pragma once

#include <stdexcept>
#include <string>

namespace poolbalance {

// Base of every error raised by the library. Subclasses name the failure
// class so callers (and the CLI exit-code mapping) can dispatch on type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Truncation window too small for the requested state or trajectory.
class DepthError : public Error {
 public:
  using Error::Error;
};

// Occupancy vector is not a valid (non-increasing, bounded) state.
class StateError : public Error {
 public:
  using Error::Error;
};

// Initial condition of a fluid system violates the start-up assumption.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Bracketed root search found no sign change.
class RootError : public Error {
 public:
  using Error::Error;
};

// Too many threshold switches in a fluid integration.
class AccumulationError : public Error {
 public:
  using Error::Error;
};

// Invalid simulation or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Diffusion scaling requested in the wrong integer/non-integer mode.
class ModeError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

// CTMC state space larger than the enumeration limit.
class SizeError : public Error {
 public:
  using Error::Error;
};

// Linear solve for a stationary distribution failed.
class SolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace poolbalance
