#pragma once

#include <stdexcept>
#include <string>

namespace iris3d {

// Error taxonomy shared across the library. Every message names the offending
// axis / field / file so callers can act on it.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shapes disagree (names the axis).
struct DimensionError : Error { using Error::Error; };
// Empty or otherwise unusable input data.
struct InputError : Error { using Error::Error; };
// API misuse, e.g. backward() on a non-scalar.
struct UsageError : Error { using Error::Error; };
// Invalid configuration value (names the field).
struct ConfigError : Error { using Error::Error; };
// Patch/window arithmetic cannot be satisfied.
struct GeometryError : Error { using Error::Error; };
// Dataset layout or sidecar problems (names the file).
struct DatasetError : Error { using Error::Error; };
// A referenced sample/embedding is missing (names the id).
struct LookupError : Error { using Error::Error; };
// Class label out of range.
struct LabelError : Error { using Error::Error; };
// Numerically degenerate input (zero-norm vector, zero-variance scores).
struct DegenerateInputError : Error { using Error::Error; };
// Triplet mining impossible for the given batch.
struct MiningError : Error { using Error::Error; };

}  // namespace iris3d
