#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace blendrig {

// Malformed or inconsistent input (files, dimensions, arguments). CLI exit code 1.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values, failed factorizations, corrupted state. CLI exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
template <typename... Args>
std::string concat(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

}  // namespace blendrig

#define BLENDRIG_CHECK(cond, ...)                                           \
  do {                                                                      \
    if (!(cond)) {                                                          \
      throw ::blendrig::InputError(::blendrig::detail::concat(__VA_ARGS__)); \
    }                                                                       \
  } while (0)
