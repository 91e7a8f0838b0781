#pragma once

#include "ionlattice/crystal.hpp"
#include "ionlattice/physics.hpp"

#include <iosfwd>
#include <vector>

// Several ions in one lattice beam. Each ion sees the depth of the Gaussian
// beam at its radial position and scatters independently.
namespace ionlattice::ensemble {

// Fundamental Gaussian mode propagating along the trap axis, flat wavefront
// across the crystal.
struct BeamProfile {
    double waist_radius = 37e-6;  // m

    // exp(-2 r^2 / w^2)
    double depth_factor(double radius) const;
    void validate() const;
};

struct ScatteringScenario {
    crystal::CrystalState crystal;
    IonSpecies species;
    LatticeConfig lattice;  // depth on the beam axis at the end of the ramp
    RampProfile ramp;
    double initial_temperature = 0.0;  // K
    double pumping_efficiency = 1.0;   // P(0) per ion
};

// Signed per-ion depths U0 exp(-2 (x^2 + y^2) / w^2), J.
std::vector<double> per_ion_depths(const crystal::CrystalState& crystal,
                                   const LatticeConfig& lattice, const BeamProfile& beam);

// Mean over ions of the single-ion scattering probability at the end of the
// ramp, each with its own depth.
double mean_scattering_probability_per_ion(const ScatteringScenario& scenario,
                                           const BeamProfile& beam, bool delocalized = false);

// Binomial probabilities of 0..N scattering ions.
std::vector<double> scatter_count_pmf(int n_ions, double p);

// f = 1 - (1 - (1 - p)^N) / (N p): share of photons that are not the first
// one of a sequence. Returns 0 at p = 0.
double subsequent_fraction(int n_ions, double p);

struct ScanRow {
    double depth = 0.0;    // J, magnitude on the beam axis
    double nu_latt = 0.0;  // Hz, on the beam axis
    double p_per_ion = 0.0;
    double subsequent_fraction = 0.0;
    double bunching = 0.5;  // mean over ions at full depth
    double p_delocalized = 0.0;
    double subsequent_fraction_delocalized = 0.0;
};

// One row per depth magnitude (J) on the beam axis; the scenario's lattice
// supplies the detuning sign and wavevector.
std::vector<ScanRow> scan_depth(const ScatteringScenario& scenario, const BeamProfile& beam,
                                const std::vector<double>& depth_grid);

// `depth_mK, nu_latt_MHz, p_per_ion, subsequent_fraction, bunching`, 9
// significant digits. With delocalized = true the delocalized-ion columns are
// written instead (bunching fixed at 1/2).
void write_scan_csv(std::ostream& out, const std::vector<ScanRow>& rows, bool delocalized = false);

}  // namespace ionlattice::ensemble
