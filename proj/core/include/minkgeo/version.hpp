#pragma once

namespace minkgeo {

inline constexpr const char* kToolName = "minkgeo";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace minkgeo
