#include "loopformer/log.hpp"

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace loopformer {

LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("LOOPFORMER_LOG");
    if (env == nullptr) return LogLevel::Info;
    if (std::strcmp(env, "error") == 0) return LogLevel::Error;
    if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

namespace {

void vlog(const char* tag, const char* fmt, va_list args) {
  std::fprintf(stderr, "[%s] ", tag);
  std::vfprintf(stderr, fmt, args);
  std::fprintf(stderr, "\n");
}

}  // namespace

void log_error(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  vlog("error", fmt, args);
  va_end(args);
}

void log_info(const char* fmt, ...) {
  if (log_level() < LogLevel::Info) return;
  va_list args;
  va_start(args, fmt);
  vlog("info", fmt, args);
  va_end(args);
}

void log_debug(const char* fmt, ...) {
  if (log_level() < LogLevel::Debug) return;
  va_list args;
  va_start(args, fmt);
  vlog("debug", fmt, args);
  va_end(args);
}

}  // namespace loopformer
