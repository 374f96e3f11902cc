#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace avlm {

// Bad argument values or shapes supplied by the caller.
struct InvalidInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Dimension mismatch between an input and the configured model.
struct ShapeError : InvalidInput {
    using InvalidInput::InvalidInput;
};

// A workflow precondition was violated (too few subjects, subject leakage,
// single-emotion batch, ...).
struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An API was called in the wrong order (e.g. backward without forward).
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

struct ParseError : std::runtime_error {
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), byte_offset(offset) {}
    std::size_t byte_offset;
};

struct FormatVersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Lost peer or failed socket operation during data-parallel training.
struct CommError : std::runtime_error {
    CommError(const std::string& what, int peer_rank)
        : std::runtime_error(what + " (rank " + std::to_string(peer_rank) + ")"), rank(peer_rank) {}
    int rank;
};

}  // namespace avlm

namespace avlm {

// Non-finite loss during training; names the step that produced it.
struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& what, long at_step) : std::runtime_error(what), step(at_step) {}
    long step;
};

}  // namespace avlm
