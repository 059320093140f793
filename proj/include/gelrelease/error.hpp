#pragma once

#include <stdexcept>
#include <string>

namespace gelrelease {

/// Invalid input: bad configuration, violated precondition, mismatched data.
class ConfigError : public std::invalid_argument {
  public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// A numerical procedure failed to converge or produced an unusable result.
class NumericalError : public std::runtime_error {
  public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// A cache file is unreadable, truncated, or belongs to different inputs.
class CacheError : public std::runtime_error {
  public:
    explicit CacheError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace gelrelease
