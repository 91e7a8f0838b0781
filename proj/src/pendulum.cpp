#include "ionlattice/pendulum.hpp"

#include "ionlattice/error.hpp"
#include "ionlattice/specfun.hpp"

#include <cmath>
#include <sstream>

namespace ionlattice::pendulum {

namespace {

using constants::boltzmann;
using constants::pi;

constexpr double quadrature_tol = 1e-11;

void require_positive(double value, const char* what)
{
    if (!(value > 0.0) || !std::isfinite(value)) {
        std::ostringstream os;
        os << "pendulum: " << what << " must be positive, got " << value;
        throw Error(ErrorCode::OutOfDomain, os.str());
    }
}

void require_non_negative(double value, const char* what)
{
    if (!(value >= 0.0) || !std::isfinite(value)) {
        std::ostringstream os;
        os << "pendulum: " << what << " must be >= 0, got " << value;
        throw Error(ErrorCode::OutOfDomain, os.str());
    }
}

// Everything the model needs about one trajectory of normalized energy x.
struct Orbit {
    double action;    // s
    double period;    // tau
    double bunching;  // <sin^2 kz>
};

Orbit orbit(double x)
{
    if (x == 1.0)
        throw Error(ErrorCode::Divergence, "pendulum: separatrix E = U0 has infinite period");
    if (x < 1.0) {
        const double m = x;
        if (m < 1e-6) {
            // s = m + m^2/8, tau = 1 + m/4, <sin^2> = m/2 + m^2/16
            return {m + m * m / 8.0, 1.0 + m / 4.0 + 9.0 * m * m / 64.0, 0.5 * m + m * m / 16.0};
        }
        const auto ke = specfun::elliptic_ke(m);
        return {(4.0 / pi) * (ke.e - ke.k * (1.0 - m)), (2.0 / pi) * ke.k, 1.0 - ke.e / ke.k};
    }
    const double m = 1.0 / x;
    const double root = std::sqrt(x);
    const auto ke = specfun::elliptic_ke(m);
    // 1 - E/K loses digits for small m; its series is m/2 + m^2/16 + 3m^3/64.
    const double one_minus_ratio =
        m < 1e-4 ? m * (0.5 + m * (1.0 / 16.0 + m * 3.0 / 64.0)) : 1.0 - ke.e / ke.k;
    return {(4.0 / pi) * root * ke.e, (2.0 / pi) * ke.k / root, x * one_minus_ratio};
}

double action_at(double x)
{
    if (x == 1.0)
        return 4.0 / pi;
    return orbit(x).action;
}

// Density of x = E/U0 for a = kB T0 / U0.
double normalized_energy_density(double x, double a)
{
    const Orbit o = orbit(x);
    return std::exp(-o.action * o.action / (4.0 * a)) / std::sqrt(pi * a) * o.period;
}

// Upper integration limit in x: beyond it the density is below exp(-60).
double energy_cutoff(double a) { return 1.5 + 60.0 * a; }

template <class Weight>
double integrate_over_energy(double a, Weight weight)
{
    const double singular[1] = {1.0};
    auto integrand = [a, &weight](double x) {
        return normalized_energy_density(x, a) * weight(x);
    };
    return specfun::integrate_with_endpoint_singularity(integrand, 0.0, energy_cutoff(a), singular,
                                                        quadrature_tol)
        .value;
}

}  // namespace

double lattice_frequency(double t_latt, const IonSpecies& species, double wavevector)
{
    require_non_negative(t_latt, "T_latt");
    require_positive(species.mass, "mass");
    return wavevector / (2.0 * pi) * std::sqrt(2.0 * boltzmann * t_latt / species.mass);
}

double depth_for_lattice_frequency(double nu_latt, const IonSpecies& species, double wavevector)
{
    require_non_negative(nu_latt, "nu_latt");
    const double velocity = 2.0 * pi * nu_latt / wavevector;
    return 0.5 * species.mass * velocity * velocity;
}

double action_density(double s, double temperature, double u0)
{
    require_non_negative(s, "action");
    require_positive(temperature, "T0");
    require_positive(u0, "U0");
    const double a = boltzmann * temperature / u0;
    return std::exp(-s * s / (4.0 * a)) / std::sqrt(pi * a);
}

double dimensionless_action(double energy, double u0)
{
    require_non_negative(energy, "energy");
    require_positive(u0, "U0");
    return action_at(energy / u0);
}

double normalized_period(double energy, double u0)
{
    require_non_negative(energy, "energy");
    require_positive(u0, "U0");
    return orbit(energy / u0).period;
}

double energy_from_action(double s, double u0)
{
    require_non_negative(s, "action");
    require_positive(u0, "U0");
    if (s == 0.0)
        return 0.0;
    if (s == 4.0 / pi)
        return u0;
    // s(x) is increasing with slope tau(x) > 0; safeguarded Newton.
    double lo = 0.0;
    double hi = std::max(2.0, 0.25 * s * s + 2.0);
    double x = s < 4.0 / pi ? std::min(s, 0.99) : 0.25 * s * s + 0.5;
    for (int iter = 0; iter < 200; ++iter) {
        if (x == 1.0)
            x = std::nextafter(1.0, s > 4.0 / pi ? 2.0 : 0.0);
        const Orbit o = orbit(x);
        const double f = o.action - s;
        if (f > 0.0)
            hi = x;
        else
            lo = x;
        double next = x - f / o.period;
        if (!(next > lo && next < hi))
            next = 0.5 * (lo + hi);
        if (std::abs(next - x) <= 1e-15 * std::max(1.0, x) || hi - lo <= 1e-15 * std::max(1.0, x))
            return next * u0;
        x = next;
    }
    throw Error(ErrorCode::NonConvergence, "energy_from_action: no convergence");
}

double energy_density(double energy, double temperature, double u0)
{
    require_non_negative(energy, "energy");
    require_positive(temperature, "T0");
    require_positive(u0, "U0");
    const double a = boltzmann * temperature / u0;
    return normalized_energy_density(energy / u0, a) / u0;
}

bool position_accessible(double kz, double energy, double u0)
{
    if (kz < -0.5 * pi || kz > 0.5 * pi)
        return false;
    const double x = energy / u0;
    if (x > 1.0)
        return true;
    const double sn = std::sin(kz);
    return sn * sn < x;
}

double position_density_given_energy(double kz, double energy, double u0)
{
    require_non_negative(energy, "energy");
    require_positive(u0, "U0");
    if (kz < -0.5 * pi || kz > 0.5 * pi) {
        std::ostringstream os;
        os << "position_density_given_energy: kz=" << kz << " outside the well [-pi/2, pi/2]";
        throw Error(ErrorCode::OutOfDomain, os.str());
    }
    const double x = energy / u0;
    const double sn = std::sin(kz);
    const double gap = x - sn * sn;
    if (x < 1.0 && gap <= 0.0) {
        std::ostringstream os;
        os << "position_density_given_energy: kz=" << kz << " beyond the turning point of E/U0="
           << x;
        throw Error(ErrorCode::OutOfDomain, os.str());
    }
    return 1.0 / (pi * orbit(x).period * std::sqrt(gap));
}

double bunching_given_energy(double energy, double u0)
{
    require_non_negative(energy, "energy");
    require_positive(u0, "U0");
    const double x = energy / u0;
    if (x == 1.0)
        return 1.0;
    return orbit(x).bunching;
}

double bunching(double temperature, double u0)
{
    require_positive(temperature, "T0");
    require_non_negative(u0, "U0");
    if (u0 == 0.0)
        return 0.5;
    const double a = boltzmann * temperature / u0;
    return integrate_over_energy(a, [](double x) { return orbit(x).bunching; });
}

double energy_density_norm(double temperature, double u0)
{
    require_positive(temperature, "T0");
    require_positive(u0, "U0");
    const double a = boltzmann * temperature / u0;
    return integrate_over_energy(a, [](double) { return 1.0; });
}

double lattice_rabi_frequency(const LatticeConfig& config)
{
    return std::sqrt(4.0 * std::abs(config.detuning) * config.magnitude() / constants::hbar);
}

double scattering_rate(double kz, double rabi, const LatticeConfig& config,
                       const IonSpecies& species)
{
    require_non_negative(rabi, "Rabi frequency");
    const double drive = rabi * std::sin(kz);
    const double half_drive2 = 0.5 * drive * drive;
    const double gp = species.gamma_p_total;
    return 0.5 * species.gamma_397 * half_drive2 /
           (0.25 * gp * gp + half_drive2 + config.detuning * config.detuning);
}

double antinode_rate(double u0, const LatticeConfig& config, const IonSpecies& species)
{
    require_non_negative(u0, "U0");
    double rate = 0.0;
    if (config.antinode_intensity && config.cross_section_397 && config.magnitude() > 0.0) {
        const double intensity = *config.antinode_intensity * u0 / config.magnitude();
        const double photon_energy = constants::hbar * constants::speed_of_light * config.wavevector;
        rate = intensity / photon_energy * *config.cross_section_397;
    } else {
        rate = species.gamma_397 * u0 / (constants::hbar * std::abs(config.detuning));
    }
    if (config.p32_channel_weight > 0.0 && species.fine_structure_splitting) {
        const double detuning_p32 = config.detuning - *species.fine_structure_splitting;
        rate += config.p32_channel_weight * species.gamma_397 * u0 * std::abs(config.detuning) /
                (constants::hbar * detuning_p32 * detuning_p32);
    }
    return rate;
}

double mean_scattering_rate(double t, double temperature, const RampProfile& ramp,
                            const LatticeConfig& config, const IonSpecies& species,
                            const ScatteringOptions& options)
{
    const double u0 = ramp.depth_fraction(t) * config.magnitude();
    if (u0 <= 0.0)
        return 0.0;
    const double b = options.delocalized ? 0.5 : bunching(temperature, u0);
    const double overlap = config.blue_detuned() ? b : 1.0 - b;
    return antinode_rate(u0, config, species) * overlap;
}

double scattering_probability(double t_end, double temperature, const RampProfile& ramp,
                              const LatticeConfig& config, const IonSpecies& species,
                              const ScatteringOptions& options)
{
    require_non_negative(t_end, "duration");
    require_positive(temperature, "T0");
    if (options.initial_occupancy < 0.0 || options.initial_occupancy > 1.0)
        throw Error(ErrorCode::OutOfDomain, "scattering_probability: P(0) must lie in [0, 1]");
    if (config.magnitude() == 0.0 || t_end == 0.0)
        return 0.0;

    auto rate = [&](double t) {
        return mean_scattering_rate(t, temperature, ramp, config, species, options);
    };
    const double scale = antinode_rate(config.magnitude(), config, species) * ramp.end_time();
    const double tol = 1e-12 * std::max(scale, 1e-30);

    double exponent = 0.0;
    const double ramp_end = std::min(t_end, ramp.ramp_duration);
    if (ramp_end > 0.0)
        exponent += specfun::integrate(rate, 0.0, ramp_end, tol).value;
    const double hold_end = std::min(t_end, ramp.end_time());
    if (hold_end > ramp.ramp_duration)
        exponent += rate(ramp.ramp_duration) * (hold_end - ramp.ramp_duration);
    return options.initial_occupancy * -std::expm1(-exponent);
}

std::optional<std::string> adiabaticity_warning(const RampProfile& ramp,
                                                const LatticeConfig& config,
                                                const IonSpecies& species)
{
    const double nu = lattice_frequency(config.temperature(), species, config.wavevector);
    if (nu <= 0.0 || ramp.ramp_duration >= 10.0 / nu)
        return std::nullopt;
    std::ostringstream os;
    os << "ramp duration " << ramp.ramp_duration * 1e6 << " us is shorter than 10 lattice periods ("
       << 10.0 / nu * 1e6 << " us at nu_latt = " << nu * 1e-6
       << " MHz); the adiabatic model may be inaccurate";
    return os.str();
}

}  // namespace ionlattice::pendulum
