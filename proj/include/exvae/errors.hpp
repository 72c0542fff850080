#pragma once

#include <stdexcept>
#include <string>

namespace exvae {

// Error taxonomy. Every failure mode maps onto one of these so callers
// (and tests) can distinguish bad input files from bad arguments from
// numerical blow-ups.

// Malformed binary container (wrong magic, bad header fields).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Payload shorter/longer than the header declares.
struct LengthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Two inputs that must agree do not (e.g. image/label counts).
struct ConsistencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller passed an out-of-contract argument value.
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Value outside its mathematical domain (e.g. pixel not in [0,1]).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

// API misuse: shape mismatch, non-scalar loss, index out of range.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// NaN/Inf where a finite number is required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad key or missing mandatory field in a run configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem-level failure; message carries the path.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace exvae
