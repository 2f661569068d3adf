#pragma once

#include <stdexcept>
#include <string>

namespace kvevict {

// Malformed arguments to a kernel or operation (shape mismatch, empty input).
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A configuration that cannot be satisfied: budget too small for the
// protected scope, H_kv not dividing H, unknown policy name.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition on mutable state,
// e.g. appending to a full cache.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Malformed or truncated model/trace file.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace kvevict
