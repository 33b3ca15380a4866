#pragma once

namespace odsel {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace odsel
