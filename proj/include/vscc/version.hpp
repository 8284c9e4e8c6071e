#pragma once

namespace vscc {

inline constexpr const char* kCodeVersion = "0.1.0";

}  // namespace vscc
