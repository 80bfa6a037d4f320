#pragma once

#include <stdexcept>
#include <string>

namespace macnet {

// Error taxonomy used across the library. All derive from MacError so callers
// can catch one base type at the CLI boundary.
struct MacError : std::runtime_error {
    explicit MacError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension mismatch between tensor operands.
struct DimensionError : MacError {
    explicit DimensionError(const std::string& msg) : MacError(msg) {}
};

// Input outside an operation's mathematical domain (e.g. softmax of empty).
struct DomainError : MacError {
    explicit DomainError(const std::string& msg) : MacError(msg) {}
};

// Caller violated an API precondition (non-scalar loss, S=0, step out of range).
struct ContractError : MacError {
    explicit ContractError(const std::string& msg) : MacError(msg) {}
};

// Token or answer id outside the vocabulary.
struct VocabError : MacError {
    explicit VocabError(const std::string& msg) : MacError(msg) {}
};

// Malformed scene (attribute outside vocabulary, colliding objects, ...).
struct SceneError : MacError {
    explicit SceneError(const std::string& msg) : MacError(msg) {}
};

// Question generation could not produce a valid instance within its retry budget.
struct GenerationError : MacError {
    explicit GenerationError(const std::string& msg) : MacError(msg) {}
};

// `unique` applied to a set of size != 1 during program execution.
struct AmbiguityError : MacError {
    explicit AmbiguityError(const std::string& msg) : MacError(msg) {}
};

// Bad configuration value or unknown configuration key.
struct ConfigError : MacError {
    explicit ConfigError(const std::string& msg) : MacError(msg) {}
};

// Malformed file content; carries a line number where applicable.
struct ParseError : MacError {
    ParseError(const std::string& msg, long line) : MacError(msg + " (line " + std::to_string(line) + ")"), line_number(line) {}
    explicit ParseError(const std::string& msg) : MacError(msg), line_number(-1) {}
    long line_number;
};

// Filesystem failure; message names the path.
struct IoError : MacError {
    explicit IoError(const std::string& msg) : MacError(msg) {}
};

// Non-finite loss or gradients during training.
struct TrainingError : MacError {
    explicit TrainingError(const std::string& msg) : MacError(msg) {}
};

// Checkpoint incompatible with the requested configuration.
struct LoadError : MacError {
    explicit LoadError(const std::string& msg) : MacError(msg) {}
};

}  // namespace macnet
