#include "ionlattice/format.hpp"

#include <cstdio>

namespace ionlattice {

std::string format_number(double value)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", value == 0.0 ? 0.0 : value);  // no "-0"
    return buf;
}

}  // namespace ionlattice
