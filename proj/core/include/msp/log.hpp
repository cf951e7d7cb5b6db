#pragma once

#include <sstream>
#include <string>

namespace msp {

enum class LogLevel { quiet = 0, info = 1, debug = 2 };

// Level comes from the MSP_LOG environment variable (quiet|info|debug),
// read once on first use. Default is info.
LogLevel log_level();
void set_log_level(LogLevel level);

void log_line(LogLevel level, const std::string& message);

namespace detail {
template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

template <typename... Args>
void log_info(Args&&... args) {
  log_line(LogLevel::info, detail::cat(std::forward<Args>(args)...));
}

template <typename... Args>
void log_debug(Args&&... args) {
  log_line(LogLevel::debug, detail::cat(std::forward<Args>(args)...));
}

}  // namespace msp
