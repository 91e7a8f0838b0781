#include "ionlattice/physics.hpp"

#include "ionlattice/error.hpp"
#include "ionlattice/micromotion.hpp"

#include <cmath>
#include <sstream>

namespace ionlattice {

namespace {

void require(bool ok, const std::string& message)
{
    if (!ok)
        throw Error(ErrorCode::OutOfDomain, message);
}

}  // namespace

IonSpecies IonSpecies::calcium40()
{
    constexpr double two_pi = 2.0 * constants::pi;
    IonSpecies s;
    s.mass = 39.962042 * constants::atomic_mass_unit;  // 40Ca minus one electron
    s.lattice_transition_wavelength = 866.214e-9;
    s.detection_wavelength = 396.959e-9;
    s.gamma_p_total = 1.0 / 7.098e-9;
    s.gamma_397 = 0.94 * s.gamma_p_total;
    s.branching_leave = 0.97;
    s.fine_structure_splitting = two_pi * 6.68e12;
    return s;
}

void IonSpecies::validate() const
{
    require(mass > 0.0, "species: mass must be positive");
    require(lattice_transition_wavelength > 0.0, "species: lattice wavelength must be positive");
    require(gamma_397 > 0.0 && gamma_397 <= gamma_p_total,
            "species: need 0 < gamma_397 <= gamma_p_total");
    require(branching_leave >= 0.0 && branching_leave <= 1.0,
            "species: branching_leave must lie in [0, 1]");
}

double RampProfile::depth_fraction(double t) const
{
    if (t < 0.0 || t > end_time())
        return 0.0;
    if (t >= ramp_duration)
        return 1.0;
    const double x = t / ramp_duration;
    switch (shape) {
    case RampShape::Linear:
        return x;
    case RampShape::SineSquared: {
        const double s = std::sin(0.5 * constants::pi * x);
        return s * s;
    }
    }
    return x;
}

void RampProfile::validate() const
{
    require(ramp_duration >= 0.0 && hold_duration >= 0.0, "ramp: durations must be >= 0");
    require(end_time() > 0.0, "ramp: total duration must be positive");
}

LatticeConfig LatticeConfig::from_temperature(double t_latt, double wavelength, double detuning)
{
    require(t_latt >= 0.0, "lattice: T_latt must be >= 0");
    require(wavelength > 0.0, "lattice: wavelength must be positive");
    LatticeConfig c;
    c.wavevector = 2.0 * constants::pi / wavelength;
    c.detuning = detuning;
    c.depth = std::copysign(constants::boltzmann * t_latt, detuning >= 0.0 ? 1.0 : -1.0);
    return c;
}

double LatticeConfig::magnitude() const { return std::abs(depth); }

double LatticeConfig::temperature() const { return magnitude() / constants::boltzmann; }

LatticeConfig LatticeConfig::with_magnitude(double u0) const
{
    LatticeConfig c = *this;
    const double old = magnitude();
    c.depth = blue_detuned() ? u0 : -u0;
    if (antinode_intensity && old > 0.0)
        c.antinode_intensity = *antinode_intensity * (u0 / old);
    return c;
}

void LatticeConfig::validate() const
{
    require(wavevector > 0.0, "lattice: wavevector must be positive");
    require(detuning != 0.0, "lattice: detuning must be non-zero");
    require((depth >= 0.0) == (detuning > 0.0) || depth == 0.0,
            "lattice: depth sign must follow the detuning sign");
    if (antinode_intensity)
        require(*antinode_intensity >= 0.0, "lattice: intensity must be >= 0");
    if (cross_section_397)
        require(*cross_section_397 > 0.0, "lattice: cross section must be positive");
    require(p32_channel_weight >= 0.0, "lattice: p32 channel weight must be >= 0");
}

TrapConfig TrapConfig::from_frequencies(double axial_hz, double radial_hz, double asymmetry,
                                        double rf_hz)
{
    constexpr double two_pi = 2.0 * constants::pi;
    TrapConfig t;
    t.omega_z = two_pi * axial_hz;
    t.omega_x = two_pi * radial_hz * (1.0 + 0.5 * asymmetry);
    t.omega_y = two_pi * radial_hz * (1.0 - 0.5 * asymmetry);
    t.omega_rf = two_pi * rf_hz;
    if (rf_hz > 0.0)
        t.q_radial = micromotion::q_from_secular_frequency(two_pi * radial_hz, t.omega_rf);
    return t;
}

void TrapConfig::validate() const
{
    require(omega_x > 0.0 && omega_y > 0.0 && omega_z > 0.0,
            "trap: secular frequencies must be positive");
    require(q_radial >= 0.0 && q_radial <= 0.908 && q_axial >= 0.0 && q_axial <= 0.908,
            "trap: q parameters must lie in the first stability region [0, 0.908]");
}

}  // namespace ionlattice
