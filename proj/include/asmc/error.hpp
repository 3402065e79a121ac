#ifndef ASMC_ERROR_HPP
#define ASMC_ERROR_HPP

#include <stdexcept>
#include <string>

namespace asmc {

// Invalid input: bad parameters, malformed config, size guards.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// A run hit a numerically impossible state, e.g. every particle weight is zero.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace asmc

#endif  // ASMC_ERROR_HPP
