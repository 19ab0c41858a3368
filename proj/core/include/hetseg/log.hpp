#pragma once

#include <sstream>
#include <string>
#include <string_view>

namespace hetseg::log {

enum class Level { debug, info, warn, error, off };

void set_level(Level level);
void write(Level level, std::string_view message);

template <class... Args>
std::string concat(const Args&... args) {
  std::ostringstream out;
  (out << ... << args);
  return out.str();
}

template <class... Args>
void info(const Args&... args) {
  write(Level::info, concat(args...));
}

template <class... Args>
void warn(const Args&... args) {
  write(Level::warn, concat(args...));
}

template <class... Args>
void error(const Args&... args) {
  write(Level::error, concat(args...));
}

}  // namespace hetseg::log
