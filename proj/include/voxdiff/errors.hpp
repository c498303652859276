#pragma once

#include <stdexcept>
#include <string>

namespace voxdiff {

// Common base so the CLI can catch one type and map it to an exit code.
class Error : public std::runtime_error {
public:
    Error(std::string msg, int exit_code)
        : std::runtime_error(std::move(msg)), exit_code_(exit_code) {}
    int exit_code() const { return exit_code_; }

private:
    int exit_code_;
};

// Bad arguments, malformed configs, inconsistent shapes, invalid files.
class ConfigError : public Error {
public:
    explicit ConfigError(std::string msg) : Error(std::move(msg), 2) {}
};

// A referenced input (scene, checkpoint, directory) does not exist.
class MissingArtifactError : public Error {
public:
    explicit MissingArtifactError(std::string msg) : Error(std::move(msg), 3) {}
};

// Non-finite losses, degenerate covariances, and other numeric dead ends.
class NumericalError : public Error {
public:
    explicit NumericalError(std::string msg) : Error(std::move(msg), 4) {}
};

} // namespace voxdiff
