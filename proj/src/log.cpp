#include "semalign/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace semalign::log {
namespace {

std::atomic<Level> g_level{Level::warning};
std::mutex g_mutex;

void emit(Level lvl, std::string_view tag, std::string_view message) {
    if (lvl < g_level.load()) {
        return;
    }
    std::lock_guard lock(g_mutex);
    std::cerr << "[" << tag << "] " << message << '\n';
}

}  // namespace

void set_level(Level lvl) { g_level.store(lvl); }
Level level() { return g_level.load(); }

void debug(std::string_view message) { emit(Level::debug, "debug", message); }
void info(std::string_view message) { emit(Level::info, "info", message); }
void warning(std::string_view message) { emit(Level::warning, "warn", message); }
void error(std::string_view message) { emit(Level::error, "error", message); }

}  // namespace semalign::log
