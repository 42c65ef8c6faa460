#pragma once

#include <stdexcept>
#include <string>

namespace ndesc {

// Error taxonomy shared by every module. The CLI maps these onto exit codes
// (config -> 2, io -> 3, numerical -> 4).
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

class NumericalError : public Error {
public:
  using Error::Error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class DegenerateInputError : public Error {
public:
  using Error::Error;
};

class TopologyError : public Error {
public:
  using Error::Error;
};

}  // namespace ndesc
