#pragma once

#include <stdexcept>
#include <string>

namespace msaunet {

// Base for every error raised by the library. The CLI maps subclasses onto
// exit codes, so new kinds should derive from the closest existing one.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ChannelError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

class DimensionError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

class InvalidSpecError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class EmptyMatrixError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class ImageError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Raised when a training step produces a non-finite loss.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace msaunet
