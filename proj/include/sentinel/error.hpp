#pragma once

#include <stdexcept>
#include <string>

namespace sentinel {

// Process exit codes used by the command-line driver.
enum ExitCode : int {
    exit_ok = 0,
    exit_bad_config = 2,       // bad arguments, malformed config, violated input contract
    exit_missing_artifact = 3, // a required upstream artifact is absent
    exit_numeric_failure = 4,  // divergence, degenerate input, singular matrix
};

/// Bad arguments, malformed configuration, or an input that violates a
/// documented precondition.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A file another pipeline stage should have produced does not exist.
class MissingArtifactError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numeric failure: non-finite values, degenerate statistics, singular systems.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace sentinel
