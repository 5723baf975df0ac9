#pragma once

#include <stdexcept>
#include <string>

namespace a3 {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad sequence/grouping length, or a sequence longer than the model context.
struct LengthError : Error {
  using Error::Error;
};

// A grouping, infill spec, prompt alignment or config violates its contract.
struct ValidationError : Error {
  using Error::Error;
};

// Non-finite loss, logits or probability vectors.
struct NumericError : Error {
  using Error::Error;
};

// Matrix or array dimensions disagree.
struct ShapeError : Error {
  using Error::Error;
};

// Corrupt, truncated or version-mismatched files.
struct FormatError : Error {
  using Error::Error;
};

}  // namespace a3
