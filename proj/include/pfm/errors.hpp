#pragma once

#include <stdexcept>
#include <string>

namespace pfm {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration values or missing inputs (exit code 1 in the CLI).
struct ConfigError : Error {
    using Error::Error;
};

// Caller misuse of an operation (empty batch, n < 1, ...).
struct UsageError : Error {
    using Error::Error;
};

// Dimension mismatch between tensors, datasets, or model specs.
struct ShapeError : Error {
    using Error::Error;
};

// NaN/Inf encountered where finiteness is a contract.
struct NumericalError : Error {
    using Error::Error;
};

// Malformed on-disk record; carries the 1-based line number.
struct ParseError : Error {
    int line;
    ParseError(const std::string& msg, int line_number)
        : Error("line " + std::to_string(line_number) + ": " + msg), line(line_number) {}
};

// All-zero unnormalized vector in a marginal computation.
struct DegenerateInputError : Error {
    using Error::Error;
};

// Preference probability exactly 0 or 1 where a finite logit is required.
struct DeterministicPreferenceError : Error {
    using Error::Error;
};

// Filesystem write/read failure at runtime.
struct IoError : Error {
    using Error::Error;
};

}  // namespace pfm
