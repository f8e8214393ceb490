// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace defas {

/// Thrown on any contract violation detected by DEFAS_CHECK.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
template <typename... Ts>
[[noreturn]] inline void raise(const char* expr, Ts&&... parts) {
  std::ostringstream os;
  os << "defas: check failed (" << expr << ")";
  if constexpr (sizeof...(parts) > 0) {
    os << ": ";
    (os << ... << parts);
  }
  throw Error(os.str());
}
}  // namespace detail

}  // namespace defas

#define DEFAS_CHECK(cond, ...)                              \
  do {                                                      \
    if (!(cond)) {                                          \
      ::defas::detail::raise(#cond __VA_OPT__(, ) __VA_ARGS__); \
    }                                                       \
  } while (0)
