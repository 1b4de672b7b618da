#pragma once

#include <string>

namespace iovqa {

/// Shortest decimal string that round-trips the exact double value.
std::string to_shortest(double x);

/// Fixed-point rendering with `digits` decimals, half away from zero. A tiny
/// magnitude nudge keeps decimal halves that are stored just below their
/// nominal value (e.g. the double nearest 0.715) rounding upward, so
/// format_fixed(0.715, 2) == "0.72".
std::string format_fixed(double x, int digits);

}  // namespace iovqa
