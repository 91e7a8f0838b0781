#pragma once

#include <numbers>

// CODATA 2018 values, SI units.
namespace ionlattice::constants {

inline constexpr double pi = std::numbers::pi;
inline constexpr double boltzmann = 1.380649e-23;          // J/K
inline constexpr double hbar = 1.054571817e-34;            // J s
inline constexpr double atomic_mass_unit = 1.66053906660e-27;  // kg
inline constexpr double elementary_charge = 1.602176634e-19;   // C
inline constexpr double vacuum_permittivity = 8.8541878128e-12;  // F/m
inline constexpr double speed_of_light = 299792458.0;      // m/s

// e^2 / (4 pi eps0), J m
inline constexpr double coulomb_constant_e2 =
    elementary_charge * elementary_charge / (4.0 * pi * vacuum_permittivity);

}  // namespace ionlattice::constants
