#pragma once

namespace drflex {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace drflex
