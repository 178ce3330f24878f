#pragma once

#include <stdexcept>
#include <string>

namespace crab {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration values (bad extents, ratios, flag values).
struct ConfigError : Error {
    using Error::Error;
};

// Problems with input data: corpora, score lists, vocabularies.
struct DataError : Error {
    using Error::Error;
};

// Malformed file content; message carries a line number where known.
struct ParseError : DataError {
    using DataError::DataError;
};

// Model file is truncated, has a bad magic/version, or is internally
// inconsistent.
struct ModelFormatError : DataError {
    using DataError::DataError;
};

// Tensor extents do not conform; message names both shapes.
struct DimensionError : Error {
    using Error::Error;
};

// An operation was called outside its contract.
struct ContractError : Error {
    using Error::Error;
};

// Training produced a non-finite value.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace crab
