#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

namespace jens {

// Shortest text that parses back to the same double.
inline std::string full_precision(double v) {
  char buf[32];
  for (int digits = 15; digits <= 17; ++digits) {
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

// Round half up at the given number of decimals, then print fixed.
// Works on the decimal value v * 10^d with a small guard so that inputs
// like 90.25 (stored as 90.2499999...) still round up.
inline std::string round_half_up(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  const double scaled = v * scale;
  const double rounded = std::floor(scaled + 0.5 + 1e-9) / scale;
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, rounded == 0.0 ? 0.0 : rounded);
  return buf;
}

}  // namespace jens
