#pragma once

#include <stdexcept>
#include <string>

namespace focal {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not line up (feature rows vs. mask cells, mismatched masks, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed FTZ/PGM/PPM/config content.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// The contrastive loss has no value for this dictionary (no negatives, or
// fewer than two pristine rows). Callers decide whether to skip the image.
class UndefinedLoss : public Error {
 public:
  using Error::Error;
};

// NaN/Inf appeared where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace focal
