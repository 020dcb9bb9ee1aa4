#include "anchorlab/common/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace anchorlab::log {
namespace {

Level parse_env() {
  const char* env = std::getenv("ANCHORLAB_LOG");
  if (env == nullptr) return Level::kInfo;
  std::string v(env);
  if (v == "error") return Level::kError;
  if (v == "debug") return Level::kDebug;
  return Level::kInfo;
}

std::atomic<int>& current() {
  static std::atomic<int> lvl{static_cast<int>(parse_env())};
  return lvl;
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

Level level() { return static_cast<Level>(current().load()); }
void set_level(Level lvl) { current().store(static_cast<int>(lvl)); }

void write(Level lvl, std::string_view msg) {
  static constexpr const char* kTags[] = {"error", "info", "debug"};
  std::lock_guard lock(sink_mutex());
  std::cerr << '[' << kTags[static_cast<int>(lvl)] << "] " << msg << '\n';
}

}  // namespace anchorlab::log
