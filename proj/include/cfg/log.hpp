#pragma once

// Minimal leveled logging to stderr, configured by CFG_PLAN_LOG=off|info|debug.

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>

#include "cfg/errors.hpp"

namespace cfg::log {

enum class Level { Off = 0, Info = 1, Debug = 2 };

inline Level parse_level(std::string_view s) {
  if (s.empty() || s == "off") return Level::Off;
  if (s == "info") return Level::Info;
  if (s == "debug") return Level::Debug;
  throw InvalidArgument("CFG_PLAN_LOG must be off, info or debug, got '" + std::string(s) + "'");
}

inline Level level_from_env() {
  const char* v = std::getenv("CFG_PLAN_LOG");
  return parse_level(v ? std::string_view(v) : std::string_view());
}

inline Level& current() {
  static Level l = Level::Off;
  return l;
}

inline void set_level(Level l) { current() = l; }
inline bool enabled(Level l) { return l != Level::Off && static_cast<int>(current()) >= static_cast<int>(l); }

template <typename... Args>
void write(Level l, const Args&... args) {
  if (!enabled(l)) return;
  std::ostringstream os;
  os << (l == Level::Debug ? "[debug] " : "[info] ");
  (os << ... << args);
  static std::mutex m;
  std::lock_guard<std::mutex> lock(m);
  std::cerr << os.str() << '\n';
}

template <typename... Args>
void info(const Args&... args) { write(Level::Info, args...); }

template <typename... Args>
void debug(const Args&... args) { write(Level::Debug, args...); }

}  // namespace cfg::log
