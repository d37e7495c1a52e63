#pragma once

namespace degboot {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace degboot
