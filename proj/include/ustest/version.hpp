#pragma once

#define USTEST_VERSION_MAJOR 0
#define USTEST_VERSION_MINOR 1
#define USTEST_VERSION_PATCH 0

namespace ustest {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ustest
