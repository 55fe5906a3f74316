#include "macfm/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace macfm {
namespace {

std::atomic<LogLevel> g_level{LogLevel::warning};
std::mutex g_mutex;

}  // namespace

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log_warning(const std::string& message) {
    if (g_level == LogLevel::quiet) return;
    std::lock_guard lock(g_mutex);
    std::cerr << "[macfm] warning: " << message << '\n';
}

void log_info(const std::string& message) {
    if (g_level != LogLevel::info) return;
    std::lock_guard lock(g_mutex);
    std::cerr << "[macfm] " << message << '\n';
}

}  // namespace macfm
