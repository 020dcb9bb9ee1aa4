#pragma once

#include <fmt/core.h>

#include <string_view>

namespace anchorlab::log {

enum class Level { kError = 0, kInfo = 1, kDebug = 2 };

// Reads ANCHORLAB_LOG once; defaults to info.
Level level();
void set_level(Level lvl);
void write(Level lvl, std::string_view msg);

template <class... Args>
void error(fmt::format_string<Args...> f, Args&&... args) {
  write(Level::kError, fmt::format(f, std::forward<Args>(args)...));
}

template <class... Args>
void info(fmt::format_string<Args...> f, Args&&... args) {
  if (level() >= Level::kInfo) write(Level::kInfo, fmt::format(f, std::forward<Args>(args)...));
}

template <class... Args>
void debug(fmt::format_string<Args...> f, Args&&... args) {
  if (level() >= Level::kDebug) write(Level::kDebug, fmt::format(f, std::forward<Args>(args)...));
}

}  // namespace anchorlab::log
