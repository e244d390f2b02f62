#pragma once

#include <cstdio>
#include <string>

namespace locdet {

// Shortest round-trippable decimal form; every serialized real goes through
// this so byte-identical output only depends on the value.
inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace locdet
