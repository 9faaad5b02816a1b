#pragma once

#include <stdexcept>
#include <string>

namespace acdit {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape / precondition violations on tensor operations.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf surfaced from a numeric kernel.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Malformed config text or CLI arguments.
struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

// File I/O and binary container problems.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace acdit
