#pragma once

#include <stdexcept>
#include <string>

namespace degboot {

/// Bad input: malformed data, violated preconditions, invalid configuration.
class ValidationError : public std::invalid_argument {
  public:
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// A numerical routine could not deliver a usable answer.
class NumericalError : public std::runtime_error {
  public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ValidationError(message);
}

}  // namespace detail
}  // namespace degboot
