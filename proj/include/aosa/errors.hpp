#pragma once

#include <stdexcept>
#include <string>

namespace aosa {

// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad arguments or violated preconditions (dims, ranges, config).
class ValidationError : public Error {
public:
    using Error::Error;
};

// Malformed or truncated on-disk data (tensor files, model files).
class FormatError : public Error {
public:
    using Error::Error;
};

// Filesystem-level failures (open, write, rename).
class IoError : public Error {
public:
    using Error::Error;
};

// Failures surfaced by a score model (including external processes).
class ModelError : public Error {
public:
    using Error::Error;
};

// Wire-protocol violations by an external model process.
class ProtocolError : public ModelError {
public:
    using ModelError::ModelError;
};

}  // namespace aosa
