#pragma once

#include "ionlattice/physics.hpp"

#include <optional>
#include <string>

// Single ion in an adiabatically ramped standing wave, treated as a classical
// pendulum U(z) = U0 sin^2(kz). The action of each trajectory is conserved
// while U0 changes slowly, so the action distribution of the initial thermal
// gas fixes the energy and position statistics at every depth.
//
// Notation used below:
//   x = E/U0   normalized energy (x < 1 trapped, x > 1 running)
//   a = kB T0/U0
//   s(E)       dimensionless action, s = (nu_latt/U0) S
//   tau(E)     period normalized to the small-oscillation period, ds/dx
//
// Energies and depths are in joules and must be positive magnitudes; the sign
// of a red-detuned lattice is handled by the scattering functions.
namespace ionlattice::pendulum {

// Small-oscillation frequency in a well, Hz: (k / 2 pi) sqrt(2 kB T_latt / M).
double lattice_frequency(double t_latt, const IonSpecies& species, double wavevector);
// Inverse of lattice_frequency, returns the depth U0 in joules.
double depth_for_lattice_frequency(double nu_latt, const IonSpecies& species, double wavevector);

// Half-Gaussian density of s inherited from the initial thermal gas.
double action_density(double s, double temperature, double u0);

double dimensionless_action(double energy, double u0);

// Throws ErrorCode::Divergence on the separatrix E = U0.
double normalized_period(double energy, double u0);

// Inverse of dimensionless_action: energy (J) whose action is s.
double energy_from_action(double s, double u0);

// Energy density per joule. Throws ErrorCode::Divergence at E = U0; the
// singularity is logarithmic and integrable.
double energy_density(double energy, double temperature, double u0);

// Density of kz over one well, kz in [-pi/2, pi/2]. For E < U0 a kz beyond
// the turning point is rejected with ErrorCode::OutOfDomain (the density is
// zero there, but asking for it is almost always a caller bug).
double position_density_given_energy(double kz, double energy, double u0);
bool position_accessible(double kz, double energy, double u0);

// <sin^2 kz> over a trajectory of energy E.
double bunching_given_energy(double energy, double u0);

// Ensemble bunching B = <sin^2 kz>, 0 for perfect pinning at the potential
// minima, 1/2 for delocalized ions. B(T0, 0) = 1/2.
double bunching(double temperature, double u0);

// Normalization integral of energy_density; 1 up to quadrature error.
double energy_density_norm(double temperature, double u0);

// Steady-state two-level rate on the detected transition at lattice phase kz
// for lattice Rabi frequency rabi (rad/s), full Lorentzian form.
double scattering_rate(double kz, double rabi, const LatticeConfig& config,
                       const IonSpecies& species);

// Omega_latt = sqrt(4 |Delta| |U0| / hbar).
double lattice_rabi_frequency(const LatticeConfig& config);

struct ScatteringOptions {
    // Replace the adiabatic position statistics with uniform ones (B = 1/2);
    // this is the "delocalized ions" reference.
    bool delocalized = false;
    // P(0), probability that the ion starts in the lattice-coupled state.
    double initial_occupancy = 1.0;
};

// Far-detuned rate per ion at full depth |U0| averaged over the instantaneous
// position distribution; config.depth is the depth at the end of the ramp.
//
//   <Gamma>(t) = (I(t) / hbar omega) sigma_397 <I / I_max>
//
// The photon-flux prefactor comes from antinode_intensity and
// cross_section_397 when both are set, otherwise from the equivalent
// Gamma_397 Omega^2 / (4 Delta^2) = Gamma_397 |U0| / (hbar |Delta|).
// <I / I_max> is B for a blue lattice and 1 - B for a red one (ions sit at
// the antinodes).
double mean_scattering_rate(double t, double temperature, const RampProfile& ramp,
                            const LatticeConfig& config, const IonSpecies& species,
                            const ScatteringOptions& options = {});

// Rate prefactor at depth |u0| in 1/s, i.e. the rate an ion would have if it
// sat permanently at an antinode.
double antinode_rate(double u0, const LatticeConfig& config, const IonSpecies& species);

// p(t_end) = P(0) (1 - exp(-int_0^t_end <Gamma> dt)).
double scattering_probability(double t_end, double temperature, const RampProfile& ramp,
                              const LatticeConfig& config, const IonSpecies& species,
                              const ScatteringOptions& options = {});

// The model assumes the ramp is slow compared with the lattice oscillation.
// Returns a message when ramp_duration < 10 / nu_latt at full depth.
std::optional<std::string> adiabaticity_warning(const RampProfile& ramp,
                                                const LatticeConfig& config,
                                                const IonSpecies& species);

}  // namespace ionlattice::pendulum
