#pragma once

#include <string_view>

namespace palu::log {

enum class Level { kError = 0, kInfo = 1, kDebug = 2 };

// Reads PALU_LOG={error,info,debug} once; defaults to error.
Level level();
void set_level(Level level);

void write(Level level, std::string_view message);

inline void error(std::string_view m) { write(Level::kError, m); }
inline void info(std::string_view m) { write(Level::kInfo, m); }
inline void debug(std::string_view m) { write(Level::kDebug, m); }

}  // namespace palu::log
