#pragma once

#include <stdexcept>
#include <string>

namespace cpsu {

// Base for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// User-facing configuration / input problems (CLI maps these to exit code 1).
struct ConfigError : Error {
    using Error::Error;
};

// Malformed documents (JSON schema violations, bad versions).
struct SchemaError : ConfigError {
    using ConfigError::ConfigError;
};

// Shape / dimension-chain violations in models.
struct DimensionError : SchemaError {
    using SchemaError::SchemaError;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

// Episode filtering rejected every episode.
struct EmptyDatasetError : Error {
    using Error::Error;
};

}  // namespace cpsu
