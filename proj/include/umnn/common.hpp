#pragma once

#include <stdexcept>
#include <string>

namespace umnn {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 6.28318530717958647692;
inline constexpr double kLogTwoPi = 1.8378770664093454836;

// Base error for everything this library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration (bad layer sizes, unknown dataset, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Mismatched tensor shapes between arguments.
struct DimensionError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// Numerical inversion could not bracket or reach the requested tolerance.
struct InversionError : Error {
  using Error::Error;
};

// Degenerate input data (e.g. a constant column passed to standardization).
struct DataError : Error {
  using Error::Error;
};

// File I/O and (de)serialization failures, including checksum mismatches.
struct IoError : Error {
  using Error::Error;
};

}  // namespace umnn
