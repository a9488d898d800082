#pragma once

#include <stdexcept>
#include <string>

namespace apu {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input text or files.
struct ParseError : Error {
    using Error::Error;
};

// Structurally valid input violating a documented invariant.
struct ValidationError : Error {
    using Error::Error;
};

// Well-formed data missing a required field or shape.
struct SchemaError : Error {
    using Error::Error;
};

// Provider/network failures that survived the retry policy.
struct TransportError : Error {
    int attempts = 0;
    TransportError(const std::string& msg, int attempt_count)
        : Error(msg), attempts(attempt_count) {}
};

}  // namespace apu
