#pragma once

#include <stdexcept>
#include <string>

namespace hpipe {

/// Bad input files, malformed JSON, schema violations. CLI maps these to exit 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Domain-level failures (invalid hierarchy handed to an operation,
/// unassigned stages, exhausted search budgets). CLI maps these to exit 1.
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Exhaustive search could not complete within the evaluation budget
/// and heuristic fallback was disabled.
struct SearchIncomplete : DomainError {
    explicit SearchIncomplete(const std::string& msg) : DomainError(msg) {}
};

/// Transport-level failures in the live runtime.
struct NetError : std::runtime_error {
    explicit NetError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hpipe
