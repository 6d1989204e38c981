#pragma once

#include <stdexcept>
#include <string>

namespace macl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or broadcast incompatibility between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A caller broke an operation's precondition (bad range, empty input, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated binary/text input.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Fisher accumulation produced a trace too small to normalize.
class DegenerateGradientError : public Error {
public:
    using Error::Error;
};

/// Invalid run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace macl
