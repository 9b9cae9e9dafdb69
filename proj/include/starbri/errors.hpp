#pragma once

#include <stdexcept>
#include <string>

namespace starbri {

/// Tensor shapes or channel counts do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN or Inf surfaced in a kernel input or output.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary file (RSEQ, SBCK) or manifest could not be decoded.
class FormatError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, VersionMismatch, Truncated, Malformed };

  FormatError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace starbri
