#pragma once

#include <stdexcept>
#include <string>

namespace assoc {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// shape/extent disagreement between tensors
struct ShapeError : Error {
  using Error::Error;
};

// malformed architecture string
struct ParseError : Error {
  using Error::Error;
};

// invalid or contradictory run configuration
struct ConfigError : Error {
  using Error::Error;
};

// file format / filesystem problems
struct IoError : Error {
  using Error::Error;
};

}  // namespace assoc
