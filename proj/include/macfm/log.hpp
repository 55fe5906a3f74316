#pragma once

#include <string>

namespace macfm {

enum class LogLevel { quiet, warning, info };

void set_log_level(LogLevel level);
LogLevel log_level();
void log_warning(const std::string& message);
void log_info(const std::string& message);

}  // namespace macfm
