#pragma once

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <string>

namespace costwise {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3, Silent = 4 };

// Threshold comes from COSTWISE_LOG={debug,info,warn,error,silent}; default warn.
inline LogLevel log_threshold() {
  static const LogLevel level = [] {
    const char* env = std::getenv("COSTWISE_LOG");
    if (env == nullptr) return LogLevel::Warn;
    std::string s(env);
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (s == "debug") return LogLevel::Debug;
    if (s == "info") return LogLevel::Info;
    if (s == "warn" || s == "warning") return LogLevel::Warn;
    if (s == "error") return LogLevel::Error;
    if (s == "silent" || s == "off" || s == "none") return LogLevel::Silent;
    return LogLevel::Warn;
  }();
  return level;
}

inline void log_message(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) < static_cast<int>(log_threshold())) return;
  const char* tag = "info";
  switch (level) {
    case LogLevel::Debug: tag = "debug"; break;
    case LogLevel::Info: tag = "info"; break;
    case LogLevel::Warn: tag = "warn"; break;
    case LogLevel::Error: tag = "error"; break;
    case LogLevel::Silent: return;
  }
  std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

inline void log_debug(const std::string& msg) { log_message(LogLevel::Debug, msg); }
inline void log_info(const std::string& msg) { log_message(LogLevel::Info, msg); }
inline void log_warn(const std::string& msg) { log_message(LogLevel::Warn, msg); }
inline void log_error(const std::string& msg) { log_message(LogLevel::Error, msg); }

}  // namespace costwise
