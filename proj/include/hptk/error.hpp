#ifndef HPTK_ERROR_HPP
#define HPTK_ERROR_HPP

#include <stdexcept>
#include <string>

namespace hptk {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or axis-size mismatch between operands.
struct DimensionError : Error {
  using Error::Error;
};

// A scalar argument (temperature, k, tolerance, ...) is out of its legal range.
struct ParameterError : Error {
  using Error::Error;
};

// Bad data fed into an op: non-finite values, out-of-range token ids.
struct InputError : Error {
  using Error::Error;
};

// API misuse: non-scalar loss, scoring the wrong layer kind, and similar.
struct UsageError : Error {
  using Error::Error;
};

// Calibration stream has no sequences (CLI exit code 3).
struct EmptyDataError : UsageError {
  using UsageError::UsageError;
};

// ModelConfig invariant broken (divisibility, pattern length, ...).
struct ConfigError : Error {
  using Error::Error;
};

// PrunePlan inconsistent with the model it is applied to (CLI exit code 4).
struct PlanError : Error {
  using Error::Error;
};

// An op produced a non-finite value mid-computation.
struct NonFiniteError : Error {
  using Error::Error;
};

// Training loss became non-finite (CLI exit code 5).
struct DivergenceError : Error {
  using Error::Error;
};

// File-format or filesystem failure.
struct IoError : Error {
  using Error::Error;
};

}  // namespace hptk

#endif
