#pragma once

namespace lgcp {

inline constexpr const char* version = "0.1.0";

}
