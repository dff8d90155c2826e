#pragma once

#include <stdexcept>
#include <string>

namespace deepgp {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Cholesky failed on every step of the jitter ladder. Usually means
/// ill-conditioned kernel hyperparameters or duplicated inducing inputs.
struct NotPositiveDefinite : Error {
    using Error::Error;
};

struct DimensionMismatch : Error {
    using Error::Error;
};

struct NonPositiveHyperparameter : Error {
    using Error::Error;
};

struct EmptyBatch : Error {
    using Error::Error;
};

struct InvalidPlan : Error {
    using Error::Error;
};

struct InvalidLayerIndex : Error {
    using Error::Error;
};

struct LayoutMismatch : Error {
    using Error::Error;
};

struct DegenerateData : Error {
    using Error::Error;
};

struct GuardViolation : Error {
    using Error::Error;
};

// io errors

struct ParseError : Error {
    using Error::Error;
};

struct RaggedRows : Error {
    using Error::Error;
};

struct EmptyFile : Error {
    using Error::Error;
};

struct VersionMismatch : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

}  // namespace deepgp
