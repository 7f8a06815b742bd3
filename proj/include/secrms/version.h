#pragma once

namespace secrms {

inline constexpr const char* kVersion = "0.1.0";

} // namespace secrms
