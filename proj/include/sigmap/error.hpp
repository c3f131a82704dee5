#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sigmap {

/// Bad or unreadable user input (files, flags, documents). CLI exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input was readable but violated a requested constraint. CLI exit code 3.
class ConstraintError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed document; carries the byte offset where parsing stopped.
class ParseError : public InputError {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : InputError(what + " (at byte " + std::to_string(byte_offset) + ")"), offset_(byte_offset) {}
  std::size_t byte_offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Inconsistent configuration (zero rays, bad layer shapes, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace sigmap
