#pragma once

#include <stdexcept>
#include <string>

namespace mrfalign {

// Base of all toolkit errors. The CLI maps each subclass to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (files, streams, tables).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A caller passed a value outside an operation's domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// A numerical routine failed (factorization, eigensolver, non-finite values).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace mrfalign
