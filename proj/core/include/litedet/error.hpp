#pragma once

#include <stdexcept>
#include <string>

namespace litedet {

// Base class for all structured errors thrown by the library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/block dimension contract violations.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid configuration values (attributes, flags, hyperparameters).
struct ConfigError : Error {
    using Error::Error;
};

// Numeric-domain violations on value types (boxes, ratios).
struct DomainError : Error {
    using Error::Error;
};

// Graph-level consistency failures.
struct ValidationError : Error {
    using Error::Error;
};

// File format / serialization failures.
struct IoError : Error {
    using Error::Error;
};

}  // namespace litedet
