#pragma once

#include <stdexcept>
#include <string>

namespace heba {

// Error taxonomy mirrored by the CLI exit codes: usage errors are handled by
// the argument parser (2), IoError maps to 3, ShapeError/InvariantError to 4,
// NumericError to 5.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct InvariantError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

}  // namespace heba
