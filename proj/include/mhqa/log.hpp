#pragma once

// Leveled logging: human-readable lines on one stream, and optionally one JSON
// object per event on another. The threshold comes from MHQA_LOG_LEVEL.

#include <chrono>
#include <cstdlib>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace mhqa {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3 };

inline LogLevel parse_log_level(std::string_view s) {
  if (s == "debug") return LogLevel::Debug;
  if (s == "info") return LogLevel::Info;
  if (s == "warn" || s == "warning") return LogLevel::Warn;
  if (s == "error") return LogLevel::Error;
  throw std::invalid_argument("unknown log level '" + std::string(s) + "'");
}

inline std::string_view to_string(LogLevel l) {
  switch (l) {
    case LogLevel::Debug: return "debug";
    case LogLevel::Info: return "info";
    case LogLevel::Warn: return "warn";
    case LogLevel::Error: return "error";
  }
  return "?";
}

/// Level named by MHQA_LOG_LEVEL, or `fallback` when unset. Bad values throw.
inline LogLevel log_level_from_env(LogLevel fallback = LogLevel::Info) {
  const char* v = std::getenv("MHQA_LOG_LEVEL");
  if (!v || !*v) return fallback;
  return parse_log_level(v);
}

class Logger {
 public:
  Logger(std::ostream* text, LogLevel level) : text_(text), level_(level) {}

  void set_json(std::ostream* json) { json_ = json; }
  LogLevel level() const { return level_; }
  bool enabled(LogLevel l) const { return l >= level_; }

  /// `fields` go to the JSON stream only; `message` to both.
  void log(LogLevel l, std::string_view event, std::string_view message, const nlohmann::json& fields = {}) {
    if (!enabled(l)) return;
    if (text_) *text_ << '[' << to_string(l) << "] " << message << '\n' << std::flush;
    if (json_) {
      nlohmann::json j = fields.is_object() ? fields : nlohmann::json::object();
      j["level"] = to_string(l);
      j["event"] = event;
      j["message"] = message;
      j["time_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
      *json_ << j.dump() << '\n' << std::flush;
    }
  }

  void debug(std::string_view e, std::string_view m, const nlohmann::json& f = {}) { log(LogLevel::Debug, e, m, f); }
  void info(std::string_view e, std::string_view m, const nlohmann::json& f = {}) { log(LogLevel::Info, e, m, f); }
  void warn(std::string_view e, std::string_view m, const nlohmann::json& f = {}) { log(LogLevel::Warn, e, m, f); }
  void error(std::string_view e, std::string_view m, const nlohmann::json& f = {}) { log(LogLevel::Error, e, m, f); }

 private:
  std::ostream* text_ = nullptr;
  std::ostream* json_ = nullptr;
  LogLevel level_;
};

}  // namespace mhqa
