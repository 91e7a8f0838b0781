#include "doctest.h"

#include "ionlattice/crystal.hpp"
#include "ionlattice/error.hpp"
#include "ionlattice/micromotion.hpp"

#include <cmath>

using namespace ionlattice;
using namespace ionlattice::micromotion;

namespace {

const IonSpecies ca = IonSpecies::calcium40();
constexpr double two_pi = 2.0 * constants::pi;

crystal::CrystalState ground(std::size_t n, const TrapConfig& trap)
{
    crystal::EquilibriumOptions o;
    o.seed = 20210701;
    return crystal::equilibrium(n, trap, ca, std::nullopt, o);
}

}  // namespace

TEST_CASE("q from the secular frequency")
{
    const double rf = two_pi * 3.98e6;
    CHECK(q_from_secular_frequency(0.0, rf) == 0.0);
    CHECK(q_from_secular_frequency(two_pi * 170e3, rf) == doctest::Approx(0.1208).epsilon(1e-3));
    CHECK(q_from_secular_frequency(two_pi * 190e3, rf) == doctest::Approx(0.1350).epsilon(1e-3));
    CHECK(q_from_secular_frequency(two_pi * 350e3, rf) ==
          doctest::Approx(2.0 * std::sqrt(2.0) * 350e3 / 3.98e6).epsilon(1e-14));
    CHECK_THROWS_AS(q_from_secular_frequency(0.5 * rf, rf), Error);
    CHECK_THROWS_AS(q_from_secular_frequency(-1.0, rf), Error);
    const TrapConfig trap = TrapConfig::from_frequencies(85e3, 170e3, 0.0, 3.98e6);
    CHECK(trap.q_radial == doctest::Approx(q_from_secular_frequency(two_pi * 170e3, rf)));
}

TEST_CASE("effective axial q and variance broadening")
{
    CHECK(effective_axial_q(0.14) == doctest::Approx(1.225e-3).epsilon(1e-12));
    CHECK(effective_axial_q(0.4) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(effective_axial_q(0.0) == 0.0);
    CHECK(variance_broadening(5e-4) - 1.0 == doctest::Approx(3.125e-8).epsilon(1e-6));
    CHECK(variance_broadening(0.14) == doctest::Approx(1.00245).epsilon(1e-12));
    CHECK(variance_broadening(0.0) == 1.0);
    CHECK_THROWS_AS(effective_axial_q(-0.1), Error);
}

TEST_CASE("ions on the rf-free axis have no micromotion")
{
    const TrapConfig trap = TrapConfig::from_frequencies(70e3, 350e3, 0.0, 3.98e6);
    const auto report = excess_micromotion(ground(8, trap), trap, ca);
    REQUIRE(report.ions.size() == 8);
    for (const auto& m : report.ions) {
        CHECK(m.amplitude.norm() <= 1e-12 * 1e-6);
        CHECK(m.radial_temperature <= 1e-9);
    }
    const auto single = excess_micromotion(ground(1, trap), trap, ca);
    CHECK(single.ions[0].amplitude.norm() == 0.0);
}

TEST_CASE("radial amplitude and energy of a zigzag")
{
    const TrapConfig trap = TrapConfig::from_frequencies(85e3, 170e3, 0.03, 3.98e6);
    const auto state = ground(4, trap);
    const auto report = excess_micromotion(state, trap, ca);
    const double omega = trap.omega_rf;
    double max_ratio = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& m = report.ions[i];
        const auto row = static_cast<Eigen::Index>(i);
        CHECK(m.amplitude(0) == doctest::Approx(std::abs(state.positions(row, 0)) * trap.q_radial / 2));
        CHECK(m.amplitude(1) == doctest::Approx(std::abs(state.positions(row, 1)) * trap.q_radial / 2));
        for (int u = 0; u < 3; ++u) {
            const double e = 0.25 * ca.mass * omega * omega * m.amplitude(u) * m.amplitude(u);
            CHECK(constants::boltzmann * m.equivalent_temperature(u) / 2 == doctest::Approx(e).epsilon(1e-12));
        }
        CHECK(m.radial_temperature ==
              doctest::Approx(m.equivalent_temperature(0) + m.equivalent_temperature(1)));
        const double radial = std::hypot(m.amplitude(0), m.amplitude(1));
        if (radial > 0.0)
            max_ratio = std::max(max_ratio, m.amplitude(2) / radial);
    }
    CHECK(max_ratio < 1e-2);
    CHECK(max_ratio > 0.0);
}

TEST_CASE("radial micromotion energy grows with the square of the displacement")
{
    const TrapConfig trap = TrapConfig::from_frequencies(105e3, 190e3, 0.03, 3.98e6);
    auto state = ground(6, trap);
    const auto base = excess_micromotion(state, trap, ca);
    state.positions.leftCols(2) *= 2.0;
    const auto doubled = excess_micromotion(state, trap, ca);
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(doubled.ions[i].radial_temperature ==
              doctest::Approx(4.0 * base.ions[i].radial_temperature).epsilon(1e-12));
}

TEST_CASE("an axial rf field drives |z| q_z / 2")
{
    TrapConfig trap = TrapConfig::from_frequencies(70e3, 350e3, 0.0, 3.98e6);
    trap.q_axial = 1e-3;
    const auto state = ground(8, trap);
    const auto report = excess_micromotion(state, trap, ca);
    for (std::size_t i = 0; i < 8; ++i)
        CHECK(report.ions[i].amplitude(2) ==
              doctest::Approx(std::abs(state.positions(static_cast<Eigen::Index>(i), 2)) * 5e-4));
}
