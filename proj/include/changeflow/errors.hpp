#pragma once

#include <stdexcept>
#include <string>

namespace changeflow {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Grid or tensor dimensions that do not satisfy an operation's contract.
class InvalidShape : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared during integration or training.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, int step) : Error(what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

}  // namespace changeflow
