#pragma once

#include <stdexcept>
#include <string>

namespace pillarnest {

// Invalid shapes, ranges, presets, config keys. CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// File-level problems (truncated blobs, bad magic, unreadable paths).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: backward on a non-scalar, pooling an empty pillar, etc.
class UsageError : public std::logic_error {
 public:
  explicit UsageError(const std::string& msg) : std::logic_error(msg) {}
};

// Numeric domain violations caught by debug checks (log of non-positive input).
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Runtime failures of long-running procedures (diverged loss, generation retry cap).
class RuntimeFailure : public std::runtime_error {
 public:
  explicit RuntimeFailure(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pillarnest
