#pragma once

#include <stdexcept>
#include <string>

namespace oltqa {

/// Caller passed something the operation's contract rejects. Maps to CLI exit status 1.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A required earlier step has not happened (missing hints, stale scoreboard, mismatched
/// checkpoint hashes). Maps to CLI exit status 2.
class PreconditionError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// The language-model backend failed. Always safe to retry.
class OracleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    bool retryable() const noexcept { return true; }
};

}  // namespace oltqa
