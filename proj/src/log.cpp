#include "palu/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace palu::log {
namespace {

Level from_env() {
    const char* env = std::getenv("PALU_LOG");
    if (env == nullptr) return Level::kError;
    const std::string v(env);
    if (v == "debug") return Level::kDebug;
    if (v == "info") return Level::kInfo;
    return Level::kError;
}

std::atomic<int>& current() {
    static std::atomic<int> lvl{static_cast<int>(from_env())};
    return lvl;
}

std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

Level level() { return static_cast<Level>(current().load()); }

void set_level(Level l) { current().store(static_cast<int>(l)); }

void write(Level l, std::string_view message) {
    if (static_cast<int>(l) > current().load()) return;
    static constexpr const char* kTags[] = {"error", "info", "debug"};
    std::lock_guard lock(sink_mutex());
    std::cerr << "[palu " << kTags[static_cast<int>(l)] << "] " << message << '\n';
}

}  // namespace palu::log
