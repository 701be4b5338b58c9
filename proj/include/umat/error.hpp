#pragma once

#include <stdexcept>
#include <string>

namespace umat {

// User-facing input problems: bad CLI flags, malformed configs, invalid
// parameter ranges. The CLI maps these to exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Problems with data on disk: missing files, malformed PNG or manifest
// content. Also exit code 1 from the CLI.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated internal expectations. Exit code 2 from the CLI.
struct InternalError : std::logic_error {
  explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace umat
