#pragma once

#include <stdexcept>
#include <string>

namespace mfcq {

// Error taxonomy mirrored by the CLI exit codes: configuration problems
// (exit 2), numerical failures such as singular blocks or path blow-up
// (exit 3), and violated mathematical invariants that signal a bug rather
// than a model property (exit 4).

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvariantViolation : std::runtime_error {
  explicit InvariantViolation(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mfcq
