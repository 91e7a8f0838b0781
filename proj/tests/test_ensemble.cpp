#include "doctest.h"
#include "oracles.hpp"

#include "ionlattice/crystal.hpp"
#include "ionlattice/ensemble.hpp"
#include "ionlattice/error.hpp"
#include "ionlattice/pendulum.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>

using namespace ionlattice;
using namespace ionlattice::ensemble;

namespace {

const IonSpecies ca = IonSpecies::calcium40();
constexpr double two_pi = 2.0 * constants::pi;

crystal::CrystalState ground(std::size_t n, const TrapConfig& trap)
{
    crystal::EquilibriumOptions o;
    o.seed = 20210701;
    return crystal::equilibrium(n, trap, ca, std::nullopt, o);
}

ScatteringScenario scenario(std::size_t n, double axial_khz, double radial_khz, double asym,
                            double t0)
{
    const TrapConfig trap = TrapConfig::from_frequencies(axial_khz * 1e3, radial_khz * 1e3, asym, 3.98e6);
    ScatteringScenario s;
    s.crystal = ground(n, trap);
    s.species = ca;
    s.lattice = LatticeConfig::from_temperature(25e-3, 866.214e-9, two_pi * 0.76e12);
    s.ramp = RampProfile::standard();
    s.initial_temperature = t0;
    return s;
}

// 1 - (1 - (1 - p)^N) / (N p) in long double.
double subsequent_oracle(int n, double p)
{
    const long double none_missing = -std::expm1(static_cast<long double>(n) * std::log1p(-static_cast<long double>(p)));
    return static_cast<double>(1.0L - none_missing / (static_cast<long double>(n) * p));
}

// P(0) (1 - exp(-int <Gamma> dt)) with the rate integrated by Simpson's rule.
double probability_oracle(const ScatteringScenario& s, double depth)
{
    const LatticeConfig lat = s.lattice.with_magnitude(depth);
    auto rate = [&](double t) {
        return pendulum::mean_scattering_rate(t, s.initial_temperature, s.ramp, lat, s.species);
    };
    const double integral = oracle::simpson(rate, 0.0, s.ramp.ramp_duration, 400) +
                            oracle::simpson(rate, s.ramp.ramp_duration, s.ramp.end_time(), 4);
    return s.pumping_efficiency * -std::expm1(-integral);
}

}  // namespace

TEST_CASE("per-ion depths follow the Gaussian beam")
{
    BeamProfile beam;
    CHECK(beam.depth_factor(0.0) == 1.0);
    CHECK(beam.depth_factor(beam.waist_radius) == doctest::Approx(std::exp(-2.0)).epsilon(1e-15));

    const auto string = scenario(8, 70, 350, 0.0, 3.6e-3);
    for (double d : per_ion_depths(string.crystal, string.lattice, beam))
        CHECK(d == doctest::Approx(string.lattice.depth).epsilon(1e-12));

    const auto zigzag = scenario(4, 85, 170, 0.03, 3.5e-3);
    const auto depths = per_ion_depths(zigzag.crystal, zigzag.lattice, beam);
    REQUIRE(depths.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        const double r2 = std::pow(zigzag.crystal.positions(row, 0), 2) +
                          std::pow(zigzag.crystal.positions(row, 1), 2);
        const double factor = depths[i] / zigzag.lattice.depth;
        CHECK(factor == doctest::Approx(std::exp(-2.0 * r2 / (37e-6 * 37e-6))).epsilon(1e-12));
        CHECK(factor > 0.95);
        CHECK(factor < 1.0);
    }
    BeamProfile bad;
    bad.waist_radius = 0.0;
    CHECK_THROWS_AS(per_ion_depths(zigzag.crystal, zigzag.lattice, bad), Error);
}

TEST_CASE("binomial count distribution")
{
    const auto none = scatter_count_pmf(5, 0.0);
    CHECK(none[0] == 1.0);
    CHECK(std::all_of(none.begin() + 1, none.end(), [](double v) { return v == 0.0; }));
    const auto half = scatter_count_pmf(2, 0.5);
    CHECK(half[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(half[1] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(half[2] == doctest::Approx(0.25).epsilon(1e-14));

    const auto pmf = scatter_count_pmf(8, 0.3);
    REQUIRE(pmf.size() == 9);
    double sum = 0.0, mean = 0.0;
    for (std::size_t k = 0; k < pmf.size(); ++k) {
        sum += pmf[k];
        mean += k * pmf[k];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(std::abs(mean - 8 * 0.3) <= 1e-12);

    std::mt19937_64 rng(77);
    std::bernoulli_distribution ion(0.3);
    std::vector<long> counts(9, 0);
    const long samples = 10'000'000;
    for (long s = 0; s < samples; ++s) {
        int k = 0;
        for (int i = 0; i < 8; ++i)
            k += ion(rng);
        ++counts[static_cast<std::size_t>(k)];
    }
    for (std::size_t k = 0; k < 9; ++k)
        CHECK(std::abs(pmf[k] - static_cast<double>(counts[k]) / samples) <= 1e-3);

    CHECK_THROWS_AS(scatter_count_pmf(3, 1.2), Error);
    CHECK_THROWS_AS(scatter_count_pmf(-1, 0.2), Error);
}

TEST_CASE("subsequent photon fraction")
{
    CHECK(subsequent_fraction(1, 0.7) == 0.0);
    CHECK(subsequent_fraction(8, 0.0) == 0.0);
    for (int n : {2, 3, 8, 20})
        CHECK(subsequent_fraction(n, 1.0) == doctest::Approx(1.0 - 1.0 / n).epsilon(1e-14));
    CHECK(subsequent_fraction(8, 0.3) == doctest::Approx(0.6073).epsilon(1e-4));

    for (int n : {2, 4, 6, 8, 50}) {
        for (double p : {1e-9, 1e-6, 1e-4, 1e-3, 0.01, 0.1, 0.3, 0.9}) {
            CAPTURE(n);
            CAPTURE(p);
            CHECK(subsequent_fraction(n, p) == doctest::Approx(subsequent_oracle(n, p)).epsilon(1e-10));
        }
    }
    // Leading order in p.
    CHECK(subsequent_fraction(8, 1e-6) == doctest::Approx(3.5e-6).epsilon(1e-5));

    // Monte Carlo: photons that are not the first of their shot.
    std::mt19937_64 rng(3);
    std::bernoulli_distribution ion(0.3);
    long photons = 0, first = 0;
    for (long s = 0; s < 2'000'000; ++s) {
        int k = 0;
        for (int i = 0; i < 8; ++i)
            k += ion(rng);
        photons += k;
        first += k > 0;
    }
    CHECK(subsequent_fraction(8, 0.3) ==
          doctest::Approx(1.0 - static_cast<double>(first) / photons).epsilon(2e-3));

    for (int n = 2; n < 30; ++n)
        CHECK(subsequent_fraction(n + 1, 0.2) > subsequent_fraction(n, 0.2));
    double prev = 0.0;
    for (int i = 1; i <= 100; ++i) {
        const double f = subsequent_fraction(8, i / 100.0);
        CHECK(f > prev);
        prev = f;
    }
    CHECK_THROWS_AS(subsequent_fraction(0, 0.5), Error);
}

TEST_CASE("mean scattering probability over the crystal")
{
    BeamProfile beam;
    const auto string = scenario(8, 70, 350, 0.0, 3.6e-3);
    const double p_string = mean_scattering_probability_per_ion(string, beam);
    const double single = pendulum::scattering_probability(
        string.ramp.end_time(), string.initial_temperature, string.ramp, string.lattice, ca);
    CHECK(p_string == doctest::Approx(single).epsilon(1e-12));

    auto zigzag = scenario(4, 85, 170, 0.03, 3.5e-3);
    const double p = mean_scattering_probability_per_ion(zigzag, beam);
    double expected = 0.0;
    for (double d : per_ion_depths(zigzag.crystal, zigzag.lattice, beam))
        expected += probability_oracle(zigzag, d) / 4.0;
    CHECK(p == doctest::Approx(expected).epsilon(1e-5));

    auto permuted = zigzag;
    permuted.crystal.positions = zigzag.crystal.positions.colwise().reverse();
    CHECK(mean_scattering_probability_per_ion(permuted, beam) == doctest::Approx(p).epsilon(1e-14));

    // Off-axis ions lose depth in a narrower beam.
    BeamProfile narrow;
    narrow.waist_radius = 15e-6;
    CHECK(mean_scattering_probability_per_ion(zigzag, narrow) < p);

    auto half_pumped = zigzag;
    half_pumped.pumping_efficiency = 0.5;
    CHECK(mean_scattering_probability_per_ion(half_pumped, beam) == doctest::Approx(0.5 * p).epsilon(1e-12));

    const double deloc = mean_scattering_probability_per_ion(zigzag, beam, true);
    CHECK(deloc > p);
}

TEST_CASE("depth scan")
{
    const auto s = scenario(8, 70, 350, 0.0, 3.6e-3);
    BeamProfile beam;
    const double mk = constants::boltzmann * 1e-3;
    const auto rows = scan_depth(s, beam, {0.0, 5 * mk, 25 * mk});
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].p_per_ion == 0.0);
    CHECK(rows[0].subsequent_fraction == 0.0);
    CHECK(rows[0].bunching == 0.5);
    CHECK(rows[0].nu_latt == 0.0);
    CHECK(rows[1].p_per_ion > 0.0);
    CHECK(rows[2].p_per_ion > rows[1].p_per_ion);
    CHECK(rows[2].p_delocalized > rows[2].p_per_ion);
    CHECK(rows[2].bunching < rows[1].bunching);
    CHECK(rows[2].subsequent_fraction == doctest::Approx(subsequent_fraction(8, rows[2].p_per_ion)));
    CHECK(rows[2].nu_latt == doctest::Approx(3.72e6).epsilon(0.01));

    std::ostringstream os;
    write_scan_csv(os, rows);
    std::istringstream in(os.str());
    std::string header, line;
    std::getline(in, header);
    CHECK(header == "depth_mK, nu_latt_MHz, p_per_ion, subsequent_fraction, bunching");
    std::getline(in, line);
    CHECK(line.substr(0, 3) == "0, ");
    std::getline(in, line);
    std::getline(in, line);
    CHECK(line.substr(0, 4) == "25, ");
    // The probability column carries 9 significant digits.
    const auto first = line.find(", ", 4) + 2;
    const std::string p_text = line.substr(first, line.find(", ", first) - first);
    CHECK(std::stod(p_text) == doctest::Approx(rows[2].p_per_ion).epsilon(1e-8));
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", rows[2].p_per_ion);
    CHECK(p_text == buf);

    std::ostringstream deloc;
    write_scan_csv(deloc, rows, true);
    CHECK(deloc.str().find(", 0.5\n") != std::string::npos);

    CHECK_THROWS_AS(scan_depth(s, beam, {}), Error);
    CHECK_THROWS_AS(scan_depth(s, beam, {2 * mk, mk}), Error);
}
