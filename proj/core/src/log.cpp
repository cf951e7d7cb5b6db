#include "msp/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <mutex>

namespace msp {

namespace {

LogLevel g_level = LogLevel::info;
std::once_flag g_env_once;
std::mutex g_mutex;

void read_env() {
  const char* v = std::getenv("MSP_LOG");
  if (!v) return;
  std::string s(v);
  if (s == "quiet") g_level = LogLevel::quiet;
  else if (s == "info") g_level = LogLevel::info;
  else if (s == "debug") g_level = LogLevel::debug;
  // anything else: keep the default rather than failing a run over logging
}

}  // namespace

LogLevel log_level() {
  std::call_once(g_env_once, read_env);
  return g_level;
}

void set_log_level(LogLevel level) {
  std::call_once(g_env_once, read_env);
  g_level = level;
}

void log_line(LogLevel level, const std::string& message) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  const char* tag = level == LogLevel::debug ? "debug" : "info";
  std::fprintf(stderr, "[%s] %s\n", tag, message.c_str());
}

}  // namespace msp
