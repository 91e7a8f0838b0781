#include "ionlattice/micromotion.hpp"

#include "ionlattice/error.hpp"

#include <cmath>
#include <sstream>

namespace ionlattice::micromotion {

double q_from_secular_frequency(double omega_secular, double omega_rf)
{
    if (!(omega_secular >= 0.0) || !(omega_rf > 0.0))
        throw Error(ErrorCode::OutOfDomain, "q_from_secular_frequency: need omega >= 0, Omega > 0");
    if (!(omega_secular < 0.5 * omega_rf)) {
        std::ostringstream os;
        os << "q_from_secular_frequency: omega_sec = " << omega_secular
           << " rad/s violates omega_sec < Omega_rf / 2";
        throw Error(ErrorCode::OutOfDomain, os.str());
    }
    return 2.0 * std::sqrt(2.0) * omega_secular / omega_rf;
}

double effective_axial_q(double q_radial)
{
    if (!(q_radial >= 0.0))
        throw Error(ErrorCode::OutOfDomain, "effective_axial_q: q_radial must be >= 0");
    const double r = 0.25 * q_radial;
    return r * r;
}

double variance_broadening(double q)
{
    if (!(q >= 0.0))
        throw Error(ErrorCode::OutOfDomain, "variance_broadening: q must be >= 0");
    return 1.0 + q * q / 8.0;
}

MicromotionReport excess_micromotion(const crystal::CrystalState& state, const TrapConfig& trap,
                                     const IonSpecies& species)
{
    trap.validate();
    if (!(trap.omega_rf > 0.0))
        throw Error(ErrorCode::OutOfDomain, "excess_micromotion: rf frequency must be set");
    const auto n = static_cast<Eigen::Index>(state.ion_count());
    const double q = trap.q_radial;
    const double omega2 = trap.omega_rf * trap.omega_rf;

    MicromotionReport report;
    report.q_radial = q;
    report.effective_q_axial = effective_axial_q(q);
    report.variance_broadening_factor = variance_broadening(q);

    Eigen::VectorXd axial(n);
    if (trap.q_axial > 0.0) {
        axial = state.positions.col(2).cwiseAbs() * (0.5 * trap.q_axial);
    } else if (n > 1) {
        const double ell = crystal::length_scale(trap, species);
        const Eigen::MatrixXd h = crystal::hessian(state.positions, trap, species);
        // Radial micromotion displacement pattern (x, -y) q / 2, crystal units.
        Eigen::VectorXd delta = Eigen::VectorXd::Zero(3 * n);
        for (Eigen::Index i = 0; i < n; ++i) {
            delta(i) = 0.5 * q * state.positions(i, 0) / ell;
            delta(n + i) = -0.5 * q * state.positions(i, 1) / ell;
        }
        const Eigen::VectorXd force = h.bottomRows(n) * delta;
        const double ratio = trap.omega_z * trap.omega_z / omega2;
        axial = force.cwiseAbs() * (ratio * ell);
    } else {
        axial.setZero();
    }

    report.ions.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        IonMicromotion& m = report.ions[static_cast<std::size_t>(i)];
        m.amplitude = {0.5 * q * std::abs(state.positions(i, 0)),
                       0.5 * q * std::abs(state.positions(i, 1)), axial(i)};
        m.kinetic_energy = 0.25 * species.mass * omega2 * m.amplitude.cwiseAbs2();
        m.equivalent_temperature = 2.0 * m.kinetic_energy / constants::boltzmann;
        m.radial_temperature = m.equivalent_temperature(0) + m.equivalent_temperature(1);
    }
    return report;
}

}  // namespace ionlattice::micromotion
