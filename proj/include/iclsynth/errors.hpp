#pragma once

#include <stdexcept>
#include <string>

namespace icls {

// Error taxonomy mirrors the CLI exit codes: usage/config -> 2,
// data -> 3, numerical failure -> 4.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/contract violations inside the tensor stack.
struct ShapeError : DataError {
    explicit ShapeError(const std::string& msg) : DataError(msg) {}
};

}  // namespace icls
