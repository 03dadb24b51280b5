#pragma once

#include <cstdio>
#include <string>

namespace hierlqr {

/// 17 significant digits: enough for a lossless double round trip.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace hierlqr
