#pragma once

#include <stdexcept>
#include <string>

namespace smcpose {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A model produced non-finite activations or a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Malformed stream, model, or config file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Inputs that violate an operation's preconditions.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace smcpose
