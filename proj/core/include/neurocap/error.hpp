#pragma once

#include <stdexcept>
#include <string>

namespace neurocap {

// Root of every error the library raises. Callers that only care about
// "something went wrong" catch this; the subclasses exist so tests and the
// CLI can tell contract violations apart from I/O trouble.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace neurocap
