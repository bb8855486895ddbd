#pragma once

namespace infoprop {

inline constexpr const char* kVersion = "v0.1.0";

}  // namespace infoprop
