#pragma once

#include <cstdio>
#include <string>

namespace kvlens::io {

// Round-trip-exact double formatting for CSV/JSON artifacts.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace kvlens::io
