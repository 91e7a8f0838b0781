#include "ionlattice/ensemble.hpp"

#include "ionlattice/error.hpp"
#include "ionlattice/format.hpp"
#include "ionlattice/pendulum.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

namespace ionlattice::ensemble {

double BeamProfile::depth_factor(double radius) const
{
    return std::exp(-2.0 * radius * radius / (waist_radius * waist_radius));
}

void BeamProfile::validate() const
{
    if (!(waist_radius > 0.0))
        throw Error(ErrorCode::OutOfDomain, "beam: waist radius must be positive");
}

std::vector<double> per_ion_depths(const crystal::CrystalState& crystal,
                                   const LatticeConfig& lattice, const BeamProfile& beam)
{
    beam.validate();
    std::vector<double> depths;
    for (Eigen::Index i = 0; i < crystal.positions.rows(); ++i) {
        const double r = std::hypot(crystal.positions(i, 0), crystal.positions(i, 1));
        depths.push_back(lattice.depth * beam.depth_factor(r));
    }
    return depths;
}

namespace {

void check_probability(double p, const char* where)
{
    if (!(p >= 0.0 && p <= 1.0)) {
        std::ostringstream os;
        os << where << ": probability " << p << " outside [0, 1]";
        throw Error(ErrorCode::OutOfDomain, os.str());
    }
}

double ion_probability(const ScatteringScenario& s, double depth, bool delocalized)
{
    const LatticeConfig lat = s.lattice.with_magnitude(std::abs(depth));
    pendulum::ScatteringOptions opt;
    opt.delocalized = delocalized;
    opt.initial_occupancy = s.pumping_efficiency;
    return pendulum::scattering_probability(s.ramp.end_time(), s.initial_temperature, s.ramp, lat,
                                            s.species, opt);
}

}  // namespace

double mean_scattering_probability_per_ion(const ScatteringScenario& scenario,
                                           const BeamProfile& beam, bool delocalized)
{
    check_probability(scenario.pumping_efficiency, "mean_scattering_probability_per_ion");
    const std::vector<double> depths = per_ion_depths(scenario.crystal, scenario.lattice, beam);
    if (depths.empty())
        throw Error(ErrorCode::OutOfDomain, "mean_scattering_probability_per_ion: empty crystal");
    double sum = 0.0;
    for (double d : depths)
        sum += ion_probability(scenario, d, delocalized);
    return sum / static_cast<double>(depths.size());
}

std::vector<double> scatter_count_pmf(int n_ions, double p)
{
    if (n_ions < 0)
        throw Error(ErrorCode::OutOfDomain, "scatter_count_pmf: N must be >= 0");
    check_probability(p, "scatter_count_pmf");
    std::vector<double> pmf(static_cast<std::size_t>(n_ions) + 1, 0.0);
    if (p == 0.0) {
        pmf.front() = 1.0;
        return pmf;
    }
    if (p == 1.0) {
        pmf.back() = 1.0;
        return pmf;
    }
    const double lp = std::log(p);
    const double lq = std::log1p(-p);
    for (int k = 0; k <= n_ions; ++k) {
        const double log_choose =
            std::lgamma(n_ions + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n_ions - k + 1.0);
        pmf[static_cast<std::size_t>(k)] = std::exp(log_choose + k * lp + (n_ions - k) * lq);
    }
    return pmf;
}

double subsequent_fraction(int n_ions, double p)
{
    if (n_ions < 1)
        throw Error(ErrorCode::OutOfDomain, "subsequent_fraction: N must be >= 1");
    check_probability(p, "subsequent_fraction");
    if (p == 0.0 || n_ions == 1)
        return 0.0;
    const double n = n_ions;
    if (n * p < 1e-3) {
        // Expansion of the closed form in p.
        return (n - 1.0) * p *
               (0.5 - (n - 2.0) * p / 6.0 + (n - 2.0) * (n - 3.0) * p * p / 24.0);
    }
    const double none = std::exp(n * std::log1p(-p));  // (1 - p)^N
    return 1.0 - (1.0 - none) / (n * p);
}

std::vector<ScanRow> scan_depth(const ScatteringScenario& scenario, const BeamProfile& beam,
                                const std::vector<double>& depth_grid)
{
    if (depth_grid.empty())
        throw Error(ErrorCode::OutOfDomain, "scan_depth: empty depth grid");
    for (std::size_t i = 0; i < depth_grid.size(); ++i) {
        if (!(depth_grid[i] >= 0.0) || (i > 0 && depth_grid[i] < depth_grid[i - 1]))
            throw Error(ErrorCode::OutOfDomain, "scan_depth: grid must be ascending and >= 0");
    }
    const int n = static_cast<int>(scenario.crystal.ion_count());
    std::vector<ScanRow> rows;
    for (double depth : depth_grid) {
        ScatteringScenario s = scenario;
        s.lattice = scenario.lattice.with_magnitude(depth);
        ScanRow row;
        row.depth = depth;
        row.nu_latt = pendulum::lattice_frequency(depth / constants::boltzmann, s.species,
                                                  s.lattice.wavevector);
        row.p_per_ion = mean_scattering_probability_per_ion(s, beam, false);
        row.p_delocalized = mean_scattering_probability_per_ion(s, beam, true);
        row.subsequent_fraction = subsequent_fraction(n, row.p_per_ion);
        row.subsequent_fraction_delocalized = subsequent_fraction(n, row.p_delocalized);
        double b = 0.0;
        for (double d : per_ion_depths(s.crystal, s.lattice, beam))
            b += pendulum::bunching(s.initial_temperature, std::abs(d));
        row.bunching = b / n;
        rows.push_back(row);
    }
    return rows;
}

void write_scan_csv(std::ostream& out, const std::vector<ScanRow>& rows, bool delocalized)
{
    out << "depth_mK, nu_latt_MHz, p_per_ion, subsequent_fraction, bunching\n";
    for (const ScanRow& r : rows) {
        out << format_number(r.depth / constants::boltzmann * 1e3) << ", "
            << format_number(r.nu_latt * 1e-6) << ", "
            << format_number(delocalized ? r.p_delocalized : r.p_per_ion) << ", "
            << format_number(delocalized ? r.subsequent_fraction_delocalized
                                         : r.subsequent_fraction)
            << ", " << format_number(delocalized ? 0.5 : r.bunching) << '\n';
    }
}

}  // namespace ionlattice::ensemble
