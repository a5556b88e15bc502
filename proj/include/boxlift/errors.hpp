#pragma once

#include <stdexcept>
#include <string>

namespace boxlift {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Geometry / numeric preconditions
struct EmptyInput : Error {
  using Error::Error;
};
struct DegenerateInput : Error {
  using Error::Error;
};
struct NonPositiveDepth : Error {
  using Error::Error;
};

// Preprocessing
struct EmptyCloud : Error {
  using Error::Error;
};
struct TooFewPoints : Error {
  using Error::Error;
};
struct NoClusterAboveMinimum : Error {
  using Error::Error;
};

// Fitting
struct AllStartsFailed : Error {
  using Error::Error;
};

// Evaluation
struct SceneMismatch : Error {
  using Error::Error;
};

// I/O
struct MalformedCalib : Error {
  using Error::Error;
};
struct MalformedLabel : Error {
  using Error::Error;
};
struct TruncatedBinary : Error {
  using Error::Error;
};
struct IoFailure : Error {
  using Error::Error;
};
struct PlacementFailure : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace boxlift
