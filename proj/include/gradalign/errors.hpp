#pragma once

#include <stdexcept>
#include <string>

namespace gradalign {

// Bad wiring: dimension mismatches, invalid config values, unparseable files.
// The CLI maps this to exit code 2.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Bad runtime inputs: out-of-range answers, undersized groups, unknown ids.
class input_error : public std::runtime_error {
public:
    explicit input_error(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values where finite math is required. The CLI maps this to
// exit code 3 and a run aborts with a diagnostic.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

// A rollout group produced under a stale policy snapshot was handed to an
// operation that requires on-policy data.
class on_policy_error : public input_error {
public:
    explicit on_policy_error(const std::string& what) : input_error(what) {}
};

} // namespace gradalign
