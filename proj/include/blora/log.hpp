// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <string>

namespace blora {

inline void log_warning(const std::string& msg) {
  std::fprintf(stderr, "[warn] %s\n", msg.c_str());
}

}  // namespace blora
