#pragma once

#include <stdexcept>
#include <string>

namespace motiondiff {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: config/input -> 2, io -> 3, numeric -> 4, format -> 5.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand shapes incompatible with an operation.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid configuration value (out-of-range schedule betas, unknown mode, ...).
struct ConfigError : Error {
    using Error::Error;
};

// API misuse: a precondition the caller controls was violated.
struct ContractError : Error {
    using Error::Error;
};

// Non-finite values or other numeric breakdown.
struct NumericError : Error {
    using Error::Error;
};

// Bad user-provided data (trajectory files, captions, clips).
struct InputError : Error {
    using Error::Error;
};

// Filesystem and serialization failures.
struct IoError : Error {
    using Error::Error;
};

// Unsupported file format or version.
struct FormatError : Error {
    using Error::Error;
};

}  // namespace motiondiff
