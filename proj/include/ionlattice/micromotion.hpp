#pragma once

#include "ionlattice/crystal.hpp"
#include "ionlattice/physics.hpp"

#include <Eigen/Dense>

#include <vector>

// Excess micromotion of ions held off the rf-free axis, from the lowest-order
// pseudo-potential picture: an ion displaced by r0 along a radial axis is
// driven at Omega_rf with amplitude A = r0 q / 2.
namespace ionlattice::micromotion {

// q = 2 sqrt(2) omega_sec / Omega_rf (a = 0). Requires omega_sec < Omega_rf / 2.
double q_from_secular_frequency(double omega_secular, double omega_rf);

// q'_z ~ (q_rad / 4)^2, the axial parameter felt by 2-D and 3-D crystals
// through the radial-axial coupling.
double effective_axial_q(double q_radial);

// Variance of a driven coordinate relative to the secular one, 1 + q^2 / 8.
double variance_broadening(double q);

struct IonMicromotion {
    Eigen::Vector3d amplitude = Eigen::Vector3d::Zero();       // m, x y z
    Eigen::Vector3d kinetic_energy = Eigen::Vector3d::Zero();  // J, 1/4 M Omega^2 A^2
    Eigen::Vector3d equivalent_temperature = Eigen::Vector3d::Zero();  // K, 2 E / kB
    double radial_temperature = 0.0;  // K, x + y
};

struct MicromotionReport {
    std::vector<IonMicromotion> ions;
    double q_radial = 0.0;
    double effective_q_axial = 0.0;
    double variance_broadening_factor = 1.0;  // for q_radial
};

// Radial amplitudes are |x| q_radial / 2 and |y| q_radial / 2.
//
// Along z the trap has no rf field unless q_axial > 0, in which case the
// amplitude is |z| q_axial / 2. Otherwise the axial motion is only driven
// through the Coulomb coupling to the radial micromotion of all ions; the
// amplitude is the resulting force at Omega_rf divided by M Omega_rf^2, i.e.
// (omega_z / Omega_rf)^2 |sum_j H_{z_i, r_j} delta r_j| in crystal units,
// with H the pseudo-potential Hessian.
MicromotionReport excess_micromotion(const crystal::CrystalState& state, const TrapConfig& trap,
                                     const IonSpecies& species);

}  // namespace ionlattice::micromotion
