#pragma once

#include <stdexcept>
#include <string>

namespace wentzell {

/// Raised when a numerical procedure fails (no convergence, singular solve,
/// vanishing observation). Invalid inputs raise std::invalid_argument instead.
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace wentzell
