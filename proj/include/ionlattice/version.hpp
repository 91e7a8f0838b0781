#pragma once

namespace ionlattice {

inline constexpr const char* version = "0.1.0";

}  // namespace ionlattice
