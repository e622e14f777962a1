#pragma once

#include <stdexcept>
#include <string>

namespace graphcal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input values or configuration. The CLI maps these to exit code 1.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Input that violates a structural invariant (asymmetric adjacency, overlapping splits).
class StructuralError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DimensionMismatch : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Malformed or missing files.
class FormatError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Failures discovered while computing: non-finite loss, non-convergence.
/// The CLI maps these to exit code 2.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace graphcal
