#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace asl {

// Base of every domain error thrown by the library. Messages carry the
// module name as a prefix, e.g. "kinetics: ...".
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParameters : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class DegenerateProtonDensity : public Error {
 public:
  DegenerateProtonDensity(std::size_t x, std::size_t y, double value)
      : Error("kinetics: non-positive proton density " + std::to_string(value) + " at masked voxel (" +
              std::to_string(x) + ", " + std::to_string(y) + ")"),
        x_(x),
        y_(y) {}
  std::size_t x() const { return x_; }
  std::size_t y() const { return y_; }

 private:
  std::size_t x_, y_;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class EmptyMask : public Error {
 public:
  using Error::Error;
};

class NonFiniteValue : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t epoch, std::size_t batch, double loss)
      : Error("pipeline: non-finite loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
              ", batch " + std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_, batch_;
};

// Tensor container errors, one type per failure class.
class ContainerError : public Error {
 public:
  using Error::Error;
};
class BadMagic : public ContainerError {
 public:
  using ContainerError::ContainerError;
};
class UnsupportedVersion : public ContainerError {
 public:
  using ContainerError::ContainerError;
};
class UnsupportedDtype : public ContainerError {
 public:
  using ContainerError::ContainerError;
};
class TruncatedPayload : public ContainerError {
 public:
  using ContainerError::ContainerError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ManifestError : public Error {
 public:
  using Error::Error;
};

}  // namespace asl
