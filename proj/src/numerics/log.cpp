#include "knobs/log.hpp"

#include <cstdio>
#include <mutex>
#include <string>

namespace knobs::log {

namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

Sink& current_sink() {
  static Sink sink = [](std::string_view level, std::string_view message) {
    std::fprintf(stderr, "[%.*s] %.*s\n", static_cast<int>(level.size()), level.data(),
                 static_cast<int>(message.size()), message.data());
  };
  return sink;
}

void emit(std::string_view level, std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (current_sink()) current_sink()(level, message);
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  Sink old = std::move(current_sink());
  current_sink() = std::move(sink);
  return old;
}

void info(std::string_view message) { emit("info", message); }
void warn(std::string_view message) { emit("warn", message); }

}  // namespace knobs::log
