#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fusion {

// Error taxonomy used across the workbench. The CLI maps ConfigError to
// exit code 1 and data-level errors (ParseError, ValueError) to exit code 2.

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Shape or rank disagreement between tensors.
struct DimensionError : Error {
    explicit DimensionError(const std::string& what) : Error(what) {}
};

// Invalid configuration value (negative epsilon, bad fraction, ...).
struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(what) {}
};

// Input data violates a documented contract (non-one-hot target row, ...).
struct ValidationError : Error {
    explicit ValidationError(const std::string& what) : Error(what) {}
};

// Bad value inside otherwise well-formed data; carries the record index.
struct ValueError : Error {
    ValueError(const std::string& what, std::size_t record)
        : Error(what + " (record " + std::to_string(record) + ")"), record_index(record) {}
    std::size_t record_index;
};

// API misuse caught at runtime (e.g. backward on a non-scalar).
struct ContractError : Error {
    explicit ContractError(const std::string& what) : Error(what) {}
};

// Malformed byte stream; carries the offset where parsing failed.
struct ParseError : Error {
    ParseError(const std::string& what, std::size_t at)
        : Error(what + " (offset " + std::to_string(at) + ")"), offset(at) {}
    std::size_t offset;
};

// Input data is degenerate for the requested analysis (rank-0 features, ...).
struct DegenerateDataError : Error {
    explicit DegenerateDataError(const std::string& what) : Error(what) {}
};

}  // namespace fusion
