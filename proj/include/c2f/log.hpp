#pragma once

#include <string>
#include <string_view>

namespace c2f {

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

LogLevel parse_log_level(std::string_view name);
void set_log_level(LogLevel level);
LogLevel log_level();

/// Writes "[level] message" to stderr when level passes the threshold.
void log(LogLevel level, std::string_view message);

inline void log_info(std::string_view m) { log(LogLevel::info, m); }
inline void log_warn(std::string_view m) { log(LogLevel::warn, m); }
inline void log_debug(std::string_view m) { log(LogLevel::debug, m); }

}  // namespace c2f
