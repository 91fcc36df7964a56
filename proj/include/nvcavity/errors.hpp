#pragma once

#include <stdexcept>
#include <string>

namespace nvcavity {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Configuration file is malformed, has unknown keys, or misses a section.
struct ConfigError : Error {
    using Error::Error;
};

// Geometry / discretization
struct ResolutionTooCoarse : Error {
    using Error::Error;
};

// Eigensolver
struct SolverNoConvergence : Error {
    using Error::Error;
};
struct ClassificationAmbiguous : Error {
    using Error::Error;
};
struct ModeTrackingLost : Error {
    using Error::Error;
};
struct TargetOutOfRange : Error {
    using Error::Error;
};
struct CalibrationNoConvergence : Error {
    using Error::Error;
};

// Field sampling
struct OffsetOutsideDomain : Error {
    using Error::Error;
};
struct DegenerateRatio : Error {
    using Error::Error;
};

// Spectrum fitting
struct FitNoConvergence : Error {
    using Error::Error;
};
struct InsufficientSpan : Error {
    using Error::Error;
};

// Axis inversion
struct InconsistentMeasurement : Error {
    using Error::Error;
};

} // namespace nvcavity
