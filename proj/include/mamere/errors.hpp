#pragma once

#include <stdexcept>
#include <string>

namespace mamere {

// Malformed or truncated on-disk data (.mamt files, fusion-state JSON).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// A fusion state that violates its own invariants, or that does not match
// the token tensor it is applied to.
struct StateError : std::runtime_error {
    explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem-level failure, always carries the path.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mamere
