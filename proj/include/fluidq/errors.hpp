#pragma once

#include <stdexcept>
#include <string>

namespace fluidq {

// Bad user input: unparsable specs, invalid parameters, inadmissible
// initial data. CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A stated precondition of an operation does not hold for otherwise
// well-formed input (e.g. inverting a flat entry process). Exit code 3.
struct PreconditionError : std::runtime_error {
  explicit PreconditionError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fluidq
