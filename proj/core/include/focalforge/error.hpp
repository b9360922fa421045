#pragma once

#include <stdexcept>
#include <string>

namespace focalforge {

// Raised for anything that touches the filesystem or a byte stream.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when an argument or loaded value breaks a documented invariant.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace focalforge
