#pragma once

#include <string>

namespace ionlattice {

// CSV number format: 9 significant digits ("%.9g"), '.' decimal separator.
std::string format_number(double value);

}  // namespace ionlattice
