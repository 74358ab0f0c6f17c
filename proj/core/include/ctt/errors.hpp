#pragma once

#include <stdexcept>
#include <string>

namespace ctt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bearing between two agents is undefined (positions closer than 1e-6 m).
class CoincidentAgents : public Error {
 public:
  CoincidentAgents(int frame)
      : Error("coincident agents at frame " + std::to_string(frame)), frame_(frame) {}
  int frame() const { return frame_; }

 private:
  int frame_;
};

class InsufficientModes : public Error {
 public:
  using Error::Error;
};

class GTMissing : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class VersionMismatch : public Error {
 public:
  using Error::Error;
};

class IncompleteMode : public Error {
 public:
  using Error::Error;
};

class GenerationFailed : public Error {
 public:
  using Error::Error;
};

class OverflowError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A loss or gradient became NaN or infinite.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctt
