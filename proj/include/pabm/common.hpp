#pragma once

#include <cstddef>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace pabm {

// Thrown for bad usage: invalid arguments, malformed configs, format
// violations. The CLI maps this to exit code 2; everything else to 1.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename... Args>
std::string strformat(const char* fmt, Args... args) {
  int n = std::snprintf(nullptr, 0, fmt, args...);
  std::string out(static_cast<size_t>(n), '\0');
  std::snprintf(out.data(), out.size() + 1, fmt, args...);
  return out;
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

inline void check_usage(bool cond, const std::string& msg) {
  if (!cond) throw UsageError(msg);
}

}  // namespace pabm
