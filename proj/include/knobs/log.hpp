#pragma once

#include <functional>
#include <string_view>

namespace knobs::log {

using Sink = std::function<void(std::string_view level, std::string_view message)>;

// Replaces the process-wide sink (stderr by default). Returns the old one so
// tests can restore it.
Sink set_sink(Sink sink);

void info(std::string_view message);
void warn(std::string_view message);

}  // namespace knobs::log
