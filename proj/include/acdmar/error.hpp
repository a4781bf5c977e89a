#pragma once

#include <stdexcept>
#include <string>

namespace acdmar {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or channel-count mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A NaN/Inf appeared in an iterate; the message names the step and iteration.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class MissingInputError : public Error {
 public:
  using Error::Error;
};

class InitError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace acdmar
