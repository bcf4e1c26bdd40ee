#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace advcast {

/// Shortest-safe decimal for exact round-trip: 17 significant digits.
std::string format_decimal(double v);

/// Strict decimal parse; throws ParseError naming `context` on failure.
double parse_decimal(std::string_view text, std::string_view context);

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view data);

/// Runs body(i) for i in [0, count) across `workers` threads. Each index is
/// handled exactly once; callers write results into per-index slots and
/// reduce afterwards in index order, so the outcome does not depend on the
/// worker count.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& body);

enum class LogLevel { error = 0, info = 1, debug = 2 };

/// Level from ADVCAST_LOG (error|info|debug), default info.
LogLevel log_level();
void log(LogLevel level, const std::string& message);

}  // namespace advcast
