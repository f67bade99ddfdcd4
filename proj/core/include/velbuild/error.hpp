#pragma once

#include <stdexcept>
#include <string>

namespace velbuild {

/// Bad usage: malformed config, invalid argument combinations, contract
/// violations at an API boundary. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure at run time: CFL violation, field blow-up, NaN loss.
/// Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File I/O and format errors for the VELB container, with a machine
/// checkable kind so callers can distinguish failure modes.
class IoError : public std::runtime_error {
public:
  enum class Kind {
    open_failed,
    bad_magic,
    bad_header,
    truncated,
    nan_payload,
    write_failed,
  };

  IoError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

private:
  Kind kind_;
};

}  // namespace velbuild
