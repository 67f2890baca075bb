#pragma once

#include <string_view>

#include "json.hpp"

namespace phishmetric {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kQuiet = 4 };

void set_log_level(LogLevel level);
LogLevel log_level();

// One JSON object per line on stderr: {"level":..,"event":..,<fields>}.
void log_event(LogLevel level, std::string_view event, const nlohmann::json& fields = {});

}  // namespace phishmetric
