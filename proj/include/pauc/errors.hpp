#pragma once

#include <stdexcept>
#include <string>

namespace pauc {

// Base for every error thrown by this library. Subcommand drivers map these
// onto process exit codes, so new error types should subclass one of the
// three families below rather than std::exception directly.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration (unknown key, bad value, bad flag).
struct ConfigError : Error {
  using Error::Error;
};

// Filesystem trouble: missing file, unreadable path, short write.
struct IoError : Error {
  using Error::Error;
};

// A file opened fine but its bytes are not a valid serialized artifact.
struct FormatError : Error {
  using Error::Error;
};

// Numeric/usage errors raised by library ops.
struct ZeroRowError : Error {
  using Error::Error;
};
struct DimMismatchError : Error {
  using Error::Error;
};
struct ShapeMismatchError : Error {
  using Error::Error;
};
struct NonFiniteEvaluationError : Error {
  using Error::Error;
};
struct TooFewPointsError : Error {
  using Error::Error;
};
struct NonUnitNormError : Error {
  using Error::Error;
};
struct MissingAssignmentError : Error {
  using Error::Error;
};
struct SingleGranularityError : Error {
  using Error::Error;
};
struct EmptyPrototypeError : Error {
  using Error::Error;
};
struct UnsupportedInstanceError : Error {
  using Error::Error;
};
struct UnsupportedDimError : Error {
  using Error::Error;
};
struct DegenerateSplitError : Error {
  using Error::Error;
};

}  // namespace pauc
