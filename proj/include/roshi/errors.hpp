#pragma once

#include <stdexcept>
#include <string>

namespace roshi {

/// Base class for all pipeline errors. Subclasses map onto CLI exit codes.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration (bad config file, bad flag values). Exit code 2.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Malformed or inconsistent data (files, packets, streams). Exit code 3.
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Codec errors, one class per failure mode so callers can tell them apart.
class ShortBufferError : public DataError {
public:
    explicit ShortBufferError(const std::string& msg) : DataError(msg) {}
};

class BadMagicError : public DataError {
public:
    explicit BadMagicError(const std::string& msg) : DataError(msg) {}
};

class BadChecksumError : public DataError {
public:
    explicit BadChecksumError(const std::string& msg) : DataError(msg) {}
};

// File container errors.
class VersionError : public DataError {
public:
    explicit VersionError(const std::string& msg) : DataError(msg) {}
};

class TruncatedError : public DataError {
public:
    TruncatedError(const std::string& msg, std::size_t offset)
        : DataError(msg + " (byte offset " + std::to_string(offset) + ")"), byte_offset(offset) {}
    std::size_t byte_offset;
};

class SchemaError : public DataError {
public:
    explicit SchemaError(const std::string& msg) : DataError(msg) {}
};

/// An iterative solver failed to converge. Exit code 4. Carries the best
/// iterate through solver-specific subclasses or result payloads.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& msg, double gradient_norm)
        : Error(msg), gradient_norm(gradient_norm) {}
    double gradient_norm;
};

}  // namespace roshi
