#pragma once

#include "ionlattice/constants.hpp"

#include <optional>

// Configuration values shared by every module. All quantities are SI; angular
// quantities (frequencies, rates, detunings) are in rad/s.
namespace ionlattice {

struct IonSpecies {
    double mass = 0.0;                          // kg
    double lattice_transition_wavelength = 0.0; // m, D3/2 -> P1/2
    double detection_wavelength = 0.0;          // m, P1/2 -> S1/2
    double gamma_p_total = 0.0;                 // rad/s, total P1/2 decay rate
    double gamma_397 = 0.0;                     // rad/s, partial rate to the ground state
    double branching_leave = 1.0;               // P(leave the lattice-coupled state | scatter)
    std::optional<double> fine_structure_splitting;  // rad/s, P1/2 - P3/2

    // 40Ca+ with literature defaults: 7.1 ns P1/2 lifetime, 94% of decays from
    // the pumped D3/2 sublevel end in S1/2, 97% leave the sublevel at all.
    static IonSpecies calcium40();

    void validate() const;
};

enum class RampShape {
    Linear,      // U0 grows linearly in time
    SineSquared, // U0 ~ sin^2(pi t / 2 t_ramp), zero slope at both ends
};

// Depth schedule: ramp from 0 to the full depth over ramp_duration, hold for
// hold_duration, then off.
struct RampProfile {
    double ramp_duration = 2e-6;  // s
    double hold_duration = 1e-6;  // s
    RampShape shape = RampShape::Linear;

    double end_time() const { return ramp_duration + hold_duration; }
    // Fraction of the full depth applied at time t, in [0, 1].
    double depth_fraction(double t) const;

    static RampProfile standard() { return {}; }
    void validate() const;
};

struct LatticeConfig {
    // Signed depth of U(z) = U0 sin^2(k z + phase): positive for blue detuning
    // (ions pinned at intensity nodes), negative for red (pinned at antinodes).
    double depth = 0.0;          // J
    double wavevector = 0.0;     // 1/m
    double detuning = 0.0;       // rad/s, > 0 blue, < 0 red
    double phase = 0.0;          // rad, lattice offset with respect to the trap centre
    std::optional<double> antinode_intensity;  // W/m^2 at |depth|
    std::optional<double> cross_section_397;   // m^2
    // Relative strength of an extra far-detuned scattering channel through
    // P3/2 (detuning shifted by the fine-structure splitting). 0 disables it.
    double p32_channel_weight = 0.0;

    // Depth from a temperature-equivalent magnitude, sign taken from detuning.
    static LatticeConfig from_temperature(double t_latt, double wavelength, double detuning);

    double magnitude() const;
    double temperature() const;  // T_latt = |U0| / kB
    bool blue_detuned() const { return detuning >= 0.0; }
    LatticeConfig with_magnitude(double u0) const;
    void validate() const;
};

struct TrapConfig {
    double omega_x = 0.0;   // rad/s
    double omega_y = 0.0;   // rad/s
    double omega_z = 0.0;   // rad/s
    double omega_rf = 0.0;  // rad/s
    double q_radial = 0.0;
    double q_axial = 0.0;

    // Radial frequencies split symmetrically: omega_x = omega_r (1 + a/2),
    // omega_y = omega_r (1 - a/2). q_radial follows from the mean radial
    // frequency through the lowest-order pseudo-potential relation.
    static TrapConfig from_frequencies(double axial_hz, double radial_hz, double asymmetry,
                                       double rf_hz);

    void validate() const;
};

}  // namespace ionlattice
