#pragma once

#include <stdexcept>
#include <string>

namespace geostyle {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/layer dimension mismatches.
struct ShapeError : Error {
    using Error::Error;
};

// Malformed binary files (bad magic, truncation, version).
struct FormatError : Error {
    using Error::Error;
};

// Malformed text inputs (manifests, split files); message lists offending lines.
struct ParseError : Error {
    using Error::Error;
};

// API misuse: bad arguments, missing context, out-of-range requests.
struct UsageError : Error {
    using Error::Error;
};

// A record lacks an annotation (e.g. bounding box) that the requested
// processing mode needs.
struct MissingAnnotationError : Error {
    using Error::Error;
};

// Numerical breakdown during optimization (non-finite loss).
struct NumericError : Error {
    using Error::Error;
};

}  // namespace geostyle
