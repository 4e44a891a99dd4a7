#pragma once

namespace wlens {

inline constexpr const char* kToolVersion = "0.1.0";
// Bumped whenever the JSON report layout changes in a non-additive way.
inline constexpr int kReportSchemaVersion = 1;

}  // namespace wlens
