#pragma once

#include <stdexcept>
#include <string>

namespace prognet {

/// Invalid user-supplied value (spec field, config key, ratio set, ...).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Unreadable, corrupt or unwritable file.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Sidecar/header metadata missing or out of range.
class MetadataError : public std::runtime_error {
 public:
  explicit MetadataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Unsatisfiable run configuration (e.g. no eligible test subjects).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Missing or inconsistent checkpoint on disk.
class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Training diverged (non-finite loss) or otherwise failed.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace prognet
