#pragma once

#include <stdexcept>
#include <string>

namespace evsnn {

// Malformed textual input (CSV lines, metrics files). Message carries the
// offending line number where one exists.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Corrupt or truncated binary files (datasets, checkpoints).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace evsnn
