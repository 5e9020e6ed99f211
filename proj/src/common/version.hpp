#pragma once

namespace shapguard {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace shapguard
