#pragma once

#include <stdexcept>
#include <string>

namespace selans {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid configuration (bad reward triple, malformed CLI arguments, ...).
/// Maps to process exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Unusable input data (unreadable files, malformed rows, duplicate ids, ...).
/// Maps to process exit code 4.
class DataError : public Error {
public:
    using Error::Error;
};

/// Exhausted transport to a live model endpoint. Maps to process exit code 3.
class TransportFailure : public Error {
public:
    using Error::Error;
};

} // namespace selans
