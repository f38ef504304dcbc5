#pragma once

namespace mfcq {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mfcq
