#pragma once

#include <stdexcept>
#include <string>

namespace tndvga {

// Bad user input: malformed files, inconsistent shapes, invalid configs.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// NaN/Inf produced during computation, or a numerically unattainable request.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tndvga
