#pragma once

namespace loopformer {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

// Level comes from the LOOPFORMER_LOG env var (error|info|debug), default info.
LogLevel log_level();

void log_error(const char* fmt, ...);
void log_info(const char* fmt, ...);
void log_debug(const char* fmt, ...);

}  // namespace loopformer
