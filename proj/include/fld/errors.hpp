#pragma once

#include <stdexcept>
#include <string>

namespace fld {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/layer shape or argument mismatch.
struct ShapeError : Error {
  using Error::Error;
};

// All landmarks coincident, zero extent, or zero inter-ocular distance.
struct DegenerateShapeError : Error {
  using Error::Error;
};

// Crop box does not intersect the source image.
struct OutOfFrameError : Error {
  using Error::Error;
};

// Landmark so far outside a heatmap that no mass lands on it.
struct OffMapError : Error {
  using Error::Error;
};

// Malformed input file (pts, image, manifest, checkpoint).
struct ParseError : Error {
  using Error::Error;
};

// Bad run configuration (unknown key, invalid value, missing path).
struct ConfigError : Error {
  using Error::Error;
};

// Invalid network description (shortcut topology, channel counts).
struct ModelError : Error {
  using Error::Error;
};

// Training aborted (non-finite loss); carries the diagnostic snapshot path.
struct TrainingAborted : Error {
  TrainingAborted(const std::string& msg, std::string snapshot)
      : Error(msg), snapshot_path(std::move(snapshot)) {}
  std::string snapshot_path;
};

}  // namespace fld
