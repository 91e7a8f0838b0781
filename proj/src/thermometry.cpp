#include "ionlattice/thermometry.hpp"

#include "ionlattice/format.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

namespace ionlattice::thermometry {

namespace {

constexpr double z95 = 1.959963984540054;

struct Params {
    double a, c, s, b;  // amplitude, centre (px), sigma (px), offset
};

Eigen::Vector4d as_vector(const Params& p) { return {p.a, p.c, p.s, p.b}; }
Params from_vector(const Eigen::Vector4d& v) { return {v(0), v(1), v(2), v(3)}; }

double model(const Params& p, double x)
{
    const double u = (x - p.c) / p.s;
    return p.a * std::exp(-0.5 * u * u) + p.b;
}

struct Linearization {
    Eigen::Matrix4d jtwj = Eigen::Matrix4d::Zero();
    Eigen::Vector4d jtwr = Eigen::Vector4d::Zero();
    double cost = 0.0;
};

Linearization linearize(const std::vector<ProfileSample>& prof, const std::vector<double>& w,
                        const Params& p)
{
    Linearization l;
    for (std::size_t i = 0; i < prof.size(); ++i) {
        const double dx = prof[i].pixel - p.c;
        const double e = std::exp(-0.5 * dx * dx / (p.s * p.s));
        const Eigen::Vector4d j(e, p.a * e * dx / (p.s * p.s), p.a * e * dx * dx / (p.s * p.s * p.s),
                                1.0);
        const double r = prof[i].counts - (p.a * e + p.b);
        l.jtwj += w[i] * j * j.transpose();
        l.jtwr += w[i] * r * j;
        l.cost += w[i] * r * r;
    }
    return l;
}

double cost_of(const std::vector<ProfileSample>& prof, const std::vector<double>& w, const Params& p)
{
    double c = 0.0;
    for (std::size_t i = 0; i < prof.size(); ++i) {
        const double r = prof[i].counts - model(p, prof[i].pixel);
        c += w[i] * r * r;
    }
    return c;
}

Params initial_guess(const std::vector<ProfileSample>& prof)
{
    double lo = prof.front().counts, hi = lo;
    for (const auto& s : prof) {
        lo = std::min(lo, s.counts);
        hi = std::max(hi, s.counts);
    }
    double m0 = 0.0, m1 = 0.0;
    for (const auto& s : prof) {
        const double v = s.counts - lo;
        m0 += v;
        m1 += v * s.pixel;
    }
    const double c = m1 / m0;
    double m2 = 0.0;
    for (const auto& s : prof)
        m2 += (s.counts - lo) * (s.pixel - c) * (s.pixel - c);
    double sigma = std::sqrt(m2 / m0);
    if (!(sigma >= 1.0))
        sigma = 1.0;
    // The second moment over a finite window with background overestimates
    // the width; the peak height gives a tighter guess when it is plausible.
    double spacing = 1.0;
    if (prof.size() > 1)
        spacing = std::abs(prof[1].pixel - prof[0].pixel);
    const double from_area = m0 * spacing / ((hi - lo) * std::sqrt(2.0 * constants::pi));
    if (from_area > 0.25 && from_area < sigma)
        sigma = from_area;
    return {hi - lo, c, sigma, lo};
}

Params levenberg_marquardt(const std::vector<ProfileSample>& prof, const std::vector<double>& w,
                           Params p, int& iterations)
{
    double mu = 1e-3;
    Linearization l = linearize(prof, w, p);
    for (int it = 0; it < 500; ++it) {
        iterations = it + 1;
        Eigen::Matrix4d a = l.jtwj;
        for (int k = 0; k < 4; ++k)
            a(k, k) += mu * std::max(l.jtwj(k, k), 1e-300);
        const Eigen::Vector4d step = a.ldlt().solve(l.jtwr);
        if (!step.allFinite()) {
            mu *= 10.0;
            continue;
        }
        const Params trial = from_vector(as_vector(p) + step);
        const double trial_cost = trial.s > 0.0 ? cost_of(prof, w, trial) : HUGE_VAL;
        if (trial_cost < l.cost) {
            const Eigen::Vector4d scale(std::abs(p.a) + 1e-300, std::max(p.s, 1.0), p.s,
                                        std::abs(p.a) + 1e-300);
            const bool small = (step.array().abs() / scale.array()).maxCoeff() <= 1e-13;
            const bool flat = l.cost - trial_cost <= 1e-15 * l.cost;
            p = trial;
            l = linearize(prof, w, p);
            mu = std::max(mu * 0.3, 1e-12);
            if (small || flat || l.cost == 0.0)
                return p;
        } else {
            mu *= 10.0;
            if (mu > 1e12)
                return p;  // no descent left within rounding
        }
    }
    throw Error(ErrorCode::NonConvergence, "fit_gaussian_profile: no convergence");
}

}  // namespace

const char* to_string(Axis axis) { return axis == Axis::Axial ? "axial" : "radial"; }

void ImagingConfig::validate() const
{
    if (!(sigma_res_axial > 0.0 && sigma_res_radial > 0.0 && pixel_pitch > 0.0))
        throw Error(ErrorCode::OutOfDomain, "imaging: resolutions and pixel pitch must be positive");
}

GaussianFit fit_gaussian_profile(const std::vector<ProfileSample>& profile, double pixel_pitch,
                                 FitWeighting weighting)
{
    if (!(pixel_pitch > 0.0))
        throw Error(ErrorCode::OutOfDomain, "fit_gaussian_profile: pixel pitch must be positive");
    if (profile.size() < 5)
        throw Error(ErrorCode::DegenerateFit, "fit_gaussian_profile: need at least 5 samples");
    const auto [lo, hi] = std::minmax_element(
        profile.begin(), profile.end(),
        [](const ProfileSample& a, const ProfileSample& b) { return a.counts < b.counts; });
    if (!(hi->counts > lo->counts))
        throw Error(ErrorCode::DegenerateFit, "fit_gaussian_profile: constant profile");

    std::vector<double> w(profile.size(), 1.0);
    int iterations = 0;
    Params p = levenberg_marquardt(profile, w, initial_guess(profile), iterations);
    if (weighting == FitWeighting::Poisson) {
        for (std::size_t i = 0; i < profile.size(); ++i)
            w[i] = 1.0 / std::max(model(p, profile[i].pixel), 1.0);
        int more = 0;
        p = levenberg_marquardt(profile, w, p, more);
        iterations += more;
    }
    if (!(p.s >= 0.25)) {
        std::ostringstream os;
        os << "fit_gaussian_profile: width " << p.s << " px collapsed below a quarter pixel";
        throw Error(ErrorCode::DegenerateFit, os.str());
    }

    const Linearization l = linearize(profile, w, p);
    const double dof = static_cast<double>(profile.size()) - 4.0;
    const double chi2 = l.cost / dof;
    Eigen::FullPivLU<Eigen::Matrix4d> lu(l.jtwj);
    if (!lu.isInvertible())
        throw Error(ErrorCode::DegenerateFit, "fit_gaussian_profile: singular normal matrix");
    const Eigen::Matrix4d cov = lu.inverse() * chi2;

    GaussianFit f;
    f.amplitude = p.a;
    f.center = p.c * pixel_pitch;
    f.sigma = p.s * pixel_pitch;
    f.offset = p.b;
    f.ci95.amplitude = z95 * std::sqrt(std::max(cov(0, 0), 0.0));
    f.ci95.center = z95 * std::sqrt(std::max(cov(1, 1), 0.0)) * pixel_pitch;
    f.ci95.sigma = z95 * std::sqrt(std::max(cov(2, 2), 0.0)) * pixel_pitch;
    f.ci95.offset = z95 * std::sqrt(std::max(cov(3, 3), 0.0));
    f.chi2_reduced = chi2;
    f.iterations = iterations;
    return f;
}

void measure_spot(SpotMeasurement& spot, const ImagingConfig& imaging, FitWeighting weighting)
{
    const GaussianFit f = fit_gaussian_profile(spot.profile, imaging.pixel_pitch, weighting);
    spot.fitted_center = f.center;
    spot.fitted_sigma = f.sigma;
    spot.sigma_ci95 = f.ci95.sigma;
}

TemperatureEstimate estimate_temperature(const std::vector<SpotMeasurement>& spots,
                                         const crystal::GammaTable& gamma, const TrapConfig& trap,
                                         const IonSpecies& species, const ImagingConfig& imaging,
                                         const EstimateOptions& options)
{
    imaging.validate();
    const double unit = constants::boltzmann / (species.mass * trap.omega_z * trap.omega_z);
    std::vector<double> xs, ys, vars, deficits;
    TemperatureEstimate est;
    for (const SpotMeasurement& s : spots) {
        if ((s.axis == Axis::Axial && !options.include_axial) ||
            (s.axis == Axis::Radial && !options.include_radial))
            continue;
        if (s.ion_index < 0 || s.ion_index >= gamma.gamma.rows()) {
            std::ostringstream os;
            os << "estimate_temperature: no gamma entry for ion " << s.ion_index;
            throw Error(ErrorCode::OutOfDomain, os.str());
        }
        if (!(s.fitted_sigma > 0.0))
            throw Error(ErrorCode::OutOfDomain, "estimate_temperature: spot has no fitted width");
        const double g = s.axis == Axis::Axial ? gamma.gamma(s.ion_index, 2)
                                               : gamma.gamma_radial_projected(s.ion_index);
        const double res = imaging.sigma_res(s.axis);
        const double y = s.fitted_sigma * s.fitted_sigma - res * res;
        const double dsigma = s.sigma_ci95 / z95;
        const double var = 4.0 * s.fitted_sigma * s.fitted_sigma * dsigma * dsigma;
        xs.push_back(unit * g * g);
        ys.push_back(y);
        vars.push_back(var);
        deficits.push_back(-y);
        est.used_ions.push_back(s.ion_index);
    }
    if (xs.empty())
        throw Error(ErrorCode::OutOfDomain, "estimate_temperature: no spots selected");
    if (std::all_of(ys.begin(), ys.end(), [](double y) { return y < 0.0; })) {
        std::ostringstream os;
        os << "estimate_temperature: every spot is narrower than the resolution (deficits";
        for (double d : deficits)
            os << ' ' << d << " m^2";
        os << ')';
        throw NegativeVarianceError(deficits, os.str());
    }

    // Exact spots (zero uncertainty) would get infinite weight; floor the
    // variance far below any realistic value so they share equal weights.
    double var_floor = 0.0;
    for (std::size_t i = 0; i < ys.size(); ++i)
        var_floor = std::max(var_floor, std::abs(ys[i]));
    var_floor = std::max(var_floor * var_floor * 1e-24, 1e-60);
    double sxx = 0.0, sxy = 0.0;
    std::vector<double> w(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        w[i] = std::isinf(vars[i]) ? 0.0 : 1.0 / std::max(vars[i], var_floor);
        sxx += w[i] * xs[i] * xs[i];
        sxy += w[i] * xs[i] * ys[i];
    }
    if (!(sxx > 0.0))
        throw Error(ErrorCode::DegenerateFit, "estimate_temperature: no spot carries weight");
    const double t_hat = sxy / sxx;
    est.temperature = std::max(t_hat, 0.0);
    const bool floored = std::all_of(vars.begin(), vars.end(),
                                     [&](double v) { return v <= var_floor; });
    est.ci95 = floored ? 0.0 : z95 / std::sqrt(sxx);
    double chi2 = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = ys[i] - est.temperature * xs[i];
        est.per_ion_residuals.push_back(r);
        chi2 += w[i] * r * r;
    }
    est.chi2_reduced = xs.size() > 1 ? chi2 / static_cast<double>(xs.size() - 1) : 0.0;
    return est;
}

std::vector<SpotMeasurement> synthesize_spots(double temperature,
                                              const crystal::CrystalState& state,
                                              const crystal::GammaTable& gamma,
                                              const TrapConfig& trap, const IonSpecies& species,
                                              const ImagingConfig& imaging,
                                              const SynthesisOptions& options)
{
    if (!(temperature >= 0.0))
        throw Error(ErrorCode::OutOfDomain, "synthesize_spots: temperature must be >= 0");
    imaging.validate();
    const auto n = static_cast<Eigen::Index>(state.ion_count());
    if (gamma.gamma.rows() != n)
        throw Error(ErrorCode::OutOfDomain, "synthesize_spots: gamma table does not match crystal");
    std::mt19937_64 rng(options.seed);
    const double pitch = imaging.pixel_pitch;

    // Image-plane coordinates: radial projection at 45 degrees and z.
    std::vector<Eigen::Vector2d> image(n);
    for (Eigen::Index i = 0; i < n; ++i)
        image[i] = {(state.positions(i, 0) + state.positions(i, 1)) / std::sqrt(2.0),
                    state.positions(i, 2)};

    std::vector<SpotMeasurement> out;
    for (Axis axis : {Axis::Axial, Axis::Radial}) {
        if ((axis == Axis::Axial && !options.axial) || (axis == Axis::Radial && !options.radial))
            continue;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double g = axis == Axis::Axial ? gamma.gamma(i, 2) : gamma.gamma_radial_projected(i);
            const double sigma = std::sqrt(crystal::spot_variance_model(
                temperature, g, trap, species, imaging.sigma_res(axis)));
            const double centre = axis == Axis::Axial ? image[i](1) : image[i](0);
            SpotMeasurement spot;
            spot.ion_index = static_cast<int>(i);
            spot.axis = axis;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j != i && (image[j] - image[i]).norm() < 2.0 * sigma)
                    spot.overlapping = true;
            }
            const double amplitude = options.photon_budget * pitch / (std::sqrt(2.0 * constants::pi) * sigma);
            const double half = options.half_width_sigmas * sigma;
            const auto first = static_cast<long>(std::floor((centre - half) / pitch));
            const auto last = static_cast<long>(std::ceil((centre + half) / pitch));
            for (long k = first; k <= last; ++k) {
                const double u = (k * pitch - centre) / sigma;
                const double mean = amplitude * std::exp(-0.5 * u * u) + options.background;
                double counts = mean;
                if (options.poisson_noise) {
                    std::poisson_distribution<long long> poisson(mean);
                    counts = static_cast<double>(poisson(rng));
                }
                spot.profile.push_back({static_cast<double>(k), counts});
            }
            out.push_back(std::move(spot));
        }
    }
    return out;
}

Eigen::MatrixXd ion_temperature_from_mode_temperatures(const crystal::ModeDecomposition& modes,
                                                       const std::vector<double>& mode_temperatures)
{
    const auto dim = modes.coordinates.rows();
    if (static_cast<Eigen::Index>(mode_temperatures.size()) != dim)
        throw Error(ErrorCode::OutOfDomain,
                    "ion_temperature_from_mode_temperatures: need one temperature per mode");
    const Eigen::Map<const Eigen::VectorXd> tp(mode_temperatures.data(), dim);
    const Eigen::VectorXd per_coordinate = modes.coordinates.cwiseAbs2() * tp;
    const auto n = dim / 3;
    Eigen::MatrixXd t(n, 3);
    for (int u = 0; u < 3; ++u)
        t.col(u) = per_coordinate.segment(u * n, n);
    return t;
}

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ','))
        fields.push_back(trim(item));
    if (!line.empty() && line.back() == ',')
        fields.emplace_back();
    return fields;
}

[[noreturn]] void parse_error(int line, const std::string& what)
{
    std::ostringstream os;
    os << "spots csv line " << line << ": " << what;
    throw Error(ErrorCode::Parse, os.str());
}

double parse_double(const std::string& s, int line, const char* column)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v))
            throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        parse_error(line, std::string("bad ") + column + " value '" + s + "'");
    }
}

}  // namespace

std::vector<SpotMeasurement> read_spots_csv(std::istream& in)
{
    std::string line;
    int number = 0;
    if (!std::getline(in, line))
        parse_error(1, "empty input, expected header 'ion_index, axis, pixel, counts'");
    ++number;
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
        line.erase(0, 3);
    const std::vector<std::string> header = split(line);
    if (header != std::vector<std::string>{"ion_index", "axis", "pixel", "counts"})
        parse_error(number, "expected header 'ion_index, axis, pixel, counts', got '" + line + "'");

    std::vector<SpotMeasurement> spots;
    std::map<std::pair<int, int>, std::size_t> index;
    while (std::getline(in, line)) {
        ++number;
        if (trim(line).empty())
            continue;
        const auto f = split(line);
        if (f.size() != 4)
            parse_error(number, "expected 4 fields");
        const double ion = parse_double(f[0], number, "ion_index");
        if (ion < 0.0 || ion != std::floor(ion))
            parse_error(number, "ion_index must be a non-negative integer");
        Axis axis;
        if (f[1] == "axial")
            axis = Axis::Axial;
        else if (f[1] == "radial")
            axis = Axis::Radial;
        else
            parse_error(number, "axis must be 'axial' or 'radial', got '" + f[1] + "'");
        const double pixel = parse_double(f[2], number, "pixel");
        const double counts = parse_double(f[3], number, "counts");
        const auto key = std::make_pair(static_cast<int>(ion), static_cast<int>(axis));
        auto it = index.find(key);
        if (it == index.end()) {
            SpotMeasurement s;
            s.ion_index = key.first;
            s.axis = axis;
            it = index.emplace(key, spots.size()).first;
            spots.push_back(std::move(s));
        }
        spots[it->second].profile.push_back({pixel, counts});
    }
    return spots;
}

void write_spots_csv(std::ostream& out, const std::vector<SpotMeasurement>& spots)
{
    out << "ion_index, axis, pixel, counts\n";
    for (const SpotMeasurement& s : spots) {
        for (const ProfileSample& p : s.profile) {
            out << s.ion_index << ", " << to_string(s.axis) << ", " << format_number(p.pixel)
                << ", " << format_number(p.counts) << '\n';
        }
    }
}

}  // namespace ionlattice::thermometry
