#pragma once

#include <stdexcept>
#include <string>

namespace gaze3d {

// Violated precondition on caller-supplied values (bad depth, zero-length
// direction, malformed shapes). Maps to CLI exit code 1.
class domain_error : public std::runtime_error {
 public:
  explicit domain_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Geometrically degenerate configuration that callers may want to handle
// (axis undefined, gaze sum near zero, coincident head keypoints).
class degenerate_error : public domain_error {
 public:
  explicit degenerate_error(const std::string& msg) : domain_error(msg) {}
};

// Corrupt or incompatible files, failed runs. Maps to CLI exit code 2.
class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gaze3d
