#pragma once

namespace cacemix {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cacemix
