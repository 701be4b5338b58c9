#pragma once

namespace umat {

inline constexpr const char* kToolkitVersion = "0.1.0";

}  // namespace umat
