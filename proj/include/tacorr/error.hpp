#pragma once

#include <stdexcept>
#include <string>

namespace tacorr {

// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / dimensionality mismatch.
struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Invalid argument value (k > M, tau <= 0, ...).
struct ParameterError : Error {
    explicit ParameterError(const std::string& msg) : Error(msg) {}
};

// Violated call contract (non-stochastic target rows, missing grads, ...).
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf encountered where finite values are required.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Malformed input file; message carries line/byte diagnostics.
struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

// Bad configuration document; message lists every offending key.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace tacorr
