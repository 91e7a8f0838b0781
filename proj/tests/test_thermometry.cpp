#include "doctest.h"

#include "ionlattice/crystal.hpp"
#include "ionlattice/error.hpp"
#include "ionlattice/thermometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <vector>

using namespace ionlattice;
using namespace ionlattice::thermometry;

namespace {

const IonSpecies ca = IonSpecies::calcium40();

std::vector<ProfileSample> gaussian_profile(double a, double c, double s, double b, int half,
                                            std::mt19937_64* rng = nullptr)
{
    std::vector<ProfileSample> p;
    for (int k = -half; k <= half; ++k) {
        const double u = (k - c) / s;
        double mean = a * std::exp(-0.5 * u * u) + b;
        if (rng)
            mean = static_cast<double>(std::poisson_distribution<long long>(mean)(*rng));
        p.push_back({static_cast<double>(k), mean});
    }
    return p;
}

struct Crystal {
    TrapConfig trap;
    crystal::CrystalState state;
    crystal::ModeDecomposition modes;
    crystal::GammaTable gamma;
};

Crystal string8()
{
    Crystal c;
    c.trap = TrapConfig::from_frequencies(70e3, 350e3, 0.0, 3.98e6);
    crystal::EquilibriumOptions o;
    o.seed = 20210701;
    c.state = crystal::equilibrium(8, c.trap, ca, std::nullopt, o);
    c.modes = crystal::normal_modes(c.state, c.trap, ca);
    c.gamma = crystal::gamma_parameters(c.modes);
    return c;
}

std::vector<SpotMeasurement> measured(double t, const Crystal& c, const ImagingConfig& img,
                                      SynthesisOptions opt)
{
    auto spots = synthesize_spots(t, c.state, c.gamma, c.trap, ca, img, opt);
    for (auto& s : spots)
        measure_spot(s, img);
    return spots;
}

}  // namespace

TEST_CASE("noiseless Gaussian is recovered exactly")
{
    const auto p = gaussian_profile(100.0, 0.0, 3.0, 5.0, 20);
    for (FitWeighting w : {FitWeighting::Uniform, FitWeighting::Poisson}) {
        const GaussianFit f = fit_gaussian_profile(p, 1.0, w);
        CHECK(f.amplitude == doctest::Approx(100.0).epsilon(1e-8));
        CHECK(std::abs(f.center) <= 3e-8);
        CHECK(f.sigma == doctest::Approx(3.0).epsilon(1e-8));
        CHECK(f.offset == doctest::Approx(5.0).epsilon(1e-8));
    }
    // Pitch scales centre and width only.
    const auto shifted = gaussian_profile(100.0, 1.3, 3.0, 5.0, 20);
    const GaussianFit g = fit_gaussian_profile(shifted, 0.92e-6);
    CHECK(g.center == doctest::Approx(1.3 * 0.92e-6).epsilon(1e-8));
    CHECK(g.sigma == doctest::Approx(3.0 * 0.92e-6).epsilon(1e-8));
    CHECK(g.amplitude == doctest::Approx(100.0).epsilon(1e-8));
}

TEST_CASE("fit confidence intervals cover at 95 percent")
{
    std::mt19937_64 rng(2024);
    int covered = 0;
    const int trials = 500;
    for (int t = 0; t < trials; ++t) {
        const auto p = gaussian_profile(1000.0, 0.0, 3.0, 5.0, 20, &rng);
        const GaussianFit f = fit_gaussian_profile(p, 1.0);
        if (std::abs(f.sigma - 3.0) <= f.ci95.sigma)
            ++covered;
    }
    CAPTURE(covered);
    CHECK(covered >= 465);  // 93 percent of 500
}

TEST_CASE("degenerate profiles")
{
    std::vector<ProfileSample> flat;
    for (int k = 0; k < 20; ++k)
        flat.push_back({static_cast<double>(k), 7.0});
    CHECK_THROWS_AS(fit_gaussian_profile(flat, 1.0), Error);
    try {
        fit_gaussian_profile(flat, 1.0);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DegenerateFit);
    }
    const std::vector<ProfileSample> few{{0, 1}, {1, 5}, {2, 1}, {3, 0}};
    try {
        fit_gaussian_profile(few, 1.0);
        FAIL("expected DegenerateFit");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DegenerateFit);
    }
}

TEST_CASE("synthetic spots at T = 0 have the resolution width")
{
    const Crystal c = string8();
    ImagingConfig img;
    SynthesisOptions opt;
    opt.poisson_noise = false;
    opt.radial = true;
    const auto spots = measured(0.0, c, img, opt);
    REQUIRE(spots.size() == 16);
    for (const auto& s : spots) {
        CHECK(s.fitted_sigma == doctest::Approx(img.sigma_res(s.axis)).epsilon(1e-7));
        CHECK(s.profile.size() >= 5);
        CHECK_FALSE(s.overlapping);
    }
    CHECK(img.sigma_res_axial / img.pixel_pitch == doctest::Approx(2.42).epsilon(0.01));
    // Fitted widths carry fit round-off only.
    const auto t = estimate_temperature(spots, c.gamma, c.trap, ca, img);
    CHECK(t.temperature <= 1e-12);
    auto exact = spots;
    for (auto& s : exact)
        s.fitted_sigma = img.sigma_res(s.axis);
    CHECK(estimate_temperature(exact, c.gamma, c.trap, ca, img).temperature == 0.0);
}

TEST_CASE("synthesis is deterministic under the seed")
{
    const Crystal c = string8();
    ImagingConfig img;
    SynthesisOptions opt;
    opt.seed = 42;
    const auto a = synthesize_spots(3.6e-3, c.state, c.gamma, c.trap, ca, img, opt);
    const auto b = synthesize_spots(3.6e-3, c.state, c.gamma, c.trap, ca, img, opt);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].profile.size() == b[i].profile.size());
        for (std::size_t k = 0; k < a[i].profile.size(); ++k)
            CHECK(a[i].profile[k].counts == b[i].profile[k].counts);
    }
    opt.seed = 43;
    const auto d = synthesize_spots(3.6e-3, c.state, c.gamma, c.trap, ca, img, opt);
    bool differs = false;
    for (std::size_t k = 0; k < a[0].profile.size(); ++k)
        differs |= a[0].profile[k].counts != d[0].profile[k].counts;
    CHECK(differs);
}

TEST_CASE("overlapping images are flagged")
{
    TrapConfig trap = TrapConfig::from_frequencies(105e3, 190e3, 0.03, 3.98e6);
    crystal::EquilibriumOptions o;
    o.seed = 20210701;
    const auto state = crystal::equilibrium(6, trap, ca, std::nullopt, o);
    const auto gamma = crystal::gamma_parameters(crystal::normal_modes(state, trap, ca));
    SynthesisOptions opt;
    opt.poisson_noise = false;
    const auto spots = synthesize_spots(3.1e-3, state, gamma, trap, ca, ImagingConfig{}, opt);
    const auto n = std::count_if(spots.begin(), spots.end(),
                                 [](const SpotMeasurement& s) { return s.overlapping; });
    CHECK(n >= 2);
}

TEST_CASE("noiseless round trip on the 8-ion string")
{
    const Crystal c = string8();
    ImagingConfig img;
    SynthesisOptions opt;
    opt.poisson_noise = false;
    for (double t : {1e-3, 3.6e-3, 10e-3}) {
        const auto est = estimate_temperature(measured(t, c, img, opt), c.gamma, c.trap, ca, img);
        CAPTURE(t);
        CHECK(est.temperature == doctest::Approx(t).epsilon(0.05));
        CHECK(est.used_ions.size() == 8);
        CHECK(est.per_ion_residuals.size() == 8);
    }
}

TEST_CASE("noisy round trip is unbiased and its CI is honest")
{
    const Crystal c = string8();
    ImagingConfig img;
    for (double t : {1e-3, 3.5e-3, 10e-3}) {
        const int trials = 60;
        int covered = 0;
        double sum = 0.0, sum2 = 0.0;
        for (int k = 0; k < trials; ++k) {
            SynthesisOptions opt;
            opt.seed = 1000 + k;
            const auto est = estimate_temperature(measured(t, c, img, opt), c.gamma, c.trap, ca, img);
            sum += est.temperature;
            sum2 += est.temperature * est.temperature;
            if (std::abs(est.temperature - t) <= est.ci95)
                ++covered;
        }
        const double mean = sum / trials;
        const double sd = std::sqrt((sum2 - trials * mean * mean) / (trials - 1));
        CAPTURE(t);
        CAPTURE(mean);
        CAPTURE(sd);
        CAPTURE(covered);
        CHECK(std::abs(mean - t) <= 3.0 * sd / std::sqrt(trials));
        CHECK(covered >= 50);  // nominal 57 of 60
    }
    // A single measurement at 3.6 mK.
    SynthesisOptions opt;
    opt.seed = 11;
    const auto est = estimate_temperature(measured(3.6e-3, c, img, opt), c.gamma, c.trap, ca, img);
    CHECK(std::abs(est.temperature - 3.6e-3) <= est.ci95);
}

TEST_CASE("estimator invariances")
{
    const Crystal c = string8();
    ImagingConfig img;
    SynthesisOptions opt;
    opt.seed = 5;
    auto spots = measured(3.6e-3, c, img, opt);
    const auto base = estimate_temperature(spots, c.gamma, c.trap, ca, img);

    auto shuffled = spots;
    std::reverse(shuffled.begin(), shuffled.end());
    std::rotate(shuffled.begin(), shuffled.begin() + 3, shuffled.end());
    const auto perm = estimate_temperature(shuffled, c.gamma, c.trap, ca, img);
    CHECK(perm.temperature == doctest::Approx(base.temperature).epsilon(1e-12));
    CHECK(perm.ci95 == doctest::Approx(base.ci95).epsilon(1e-12));

    auto extra = spots;
    SpotMeasurement useless = spots[2];
    useless.fitted_sigma *= 1.7;
    useless.sigma_ci95 = std::numeric_limits<double>::infinity();
    extra.push_back(useless);
    const auto with_extra = estimate_temperature(extra, c.gamma, c.trap, ca, img);
    CHECK(with_extra.temperature == doctest::Approx(base.temperature).epsilon(1e-12));
    CHECK(with_extra.ci95 == doctest::Approx(base.ci95).epsilon(1e-12));

    // Radial spots are ignored unless requested.
    SynthesisOptions both = opt;
    both.radial = true;
    const auto all = measured(3.6e-3, c, img, both);
    EstimateOptions axial_only;
    CHECK(estimate_temperature(all, c.gamma, c.trap, ca, img, axial_only).used_ions.size() == 8);
    EstimateOptions with_radial;
    with_radial.include_radial = true;
    CHECK(estimate_temperature(all, c.gamma, c.trap, ca, img, with_radial).used_ions.size() == 16);
}

TEST_CASE("fitted variance is linear in gamma squared")
{
    const Crystal c = string8();
    ImagingConfig img;
    SynthesisOptions opt;
    opt.poisson_noise = false;
    const double t = 5e-3;
    const auto spots = measured(t, c, img, opt);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(spots.size());
    for (const auto& s : spots) {
        const double g = c.gamma.gamma(s.ion_index, 2);
        const double x = g * g, y = s.fitted_sigma * s.fitted_sigma;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double intercept = (sy - slope * sx) / n;
    const double unit = constants::boltzmann * t / (ca.mass * c.trap.omega_z * c.trap.omega_z);
    CHECK(slope == doctest::Approx(unit).epsilon(1e-5));
    CHECK(intercept == doctest::Approx(img.sigma_res_axial * img.sigma_res_axial).epsilon(1e-6));
}

TEST_CASE("narrow spots raise NegativeVarianceError")
{
    const Crystal c = string8();
    ImagingConfig img;
    std::vector<SpotMeasurement> spots(3);
    for (int i = 0; i < 3; ++i) {
        spots[i].ion_index = i;
        spots[i].fitted_sigma = 0.9 * img.sigma_res_axial;
        spots[i].sigma_ci95 = 0.01e-6;
    }
    try {
        estimate_temperature(spots, c.gamma, c.trap, ca, img);
        FAIL("expected NegativeVarianceError");
    } catch (const NegativeVarianceError& e) {
        REQUIRE(e.deficits().size() == 3);
        const double r = img.sigma_res_axial;
        CHECK(e.deficits()[0] == doctest::Approx(r * r * (1.0 - 0.81)).epsilon(1e-12));
        CHECK(e.code() == ErrorCode::NonPhysical);
    }
    // One wide spot is enough to estimate (clamped at zero if need be).
    spots[1].fitted_sigma = 1.05 * img.sigma_res_axial;
    const auto est = estimate_temperature(spots, c.gamma, c.trap, ca, img);
    CHECK(est.temperature >= 0.0);
    spots[0].ion_index = 99;
    CHECK_THROWS_AS(estimate_temperature(spots, c.gamma, c.trap, ca, img), Error);
}

TEST_CASE("ion temperatures from mode temperatures")
{
    const Crystal c = string8();
    const auto dim = c.modes.eigenvalues.size();
    const Eigen::MatrixXd equal =
        ion_temperature_from_mode_temperatures(c.modes, std::vector<double>(dim, 2e-3));
    CHECK((equal.array() - 2e-3).abs().maxCoeff() <= 1e-15);

    std::vector<double> hot(dim, 0.0);
    hot[5] = 1.0;
    const Eigen::MatrixXd one = ion_temperature_from_mode_temperatures(c.modes, hot);
    for (Eigen::Index i = 0; i < 8; ++i)
        for (int u = 0; u < 3; ++u)
            CHECK(one(i, u) == doctest::Approx(std::pow(c.modes.coordinates(u * 8 + i, 5), 2)));

    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> uni(0.0, 5e-3);
    std::vector<double> tp(dim);
    for (auto& t : tp)
        t = uni(rng);
    const Eigen::MatrixXd got = ion_temperature_from_mode_temperatures(c.modes, tp);
    // Brute force: diag(B diag(T) B^T).
    Eigen::VectorXd tv = Eigen::Map<Eigen::VectorXd>(tp.data(), dim);
    const Eigen::MatrixXd full = c.modes.coordinates * tv.asDiagonal() * c.modes.coordinates.transpose();
    for (Eigen::Index i = 0; i < 8; ++i)
        for (int u = 0; u < 3; ++u)
            CHECK(std::abs(got(i, u) - full(u * 8 + i, u * 8 + i)) <= 1e-12 * 5e-3);
    CHECK_THROWS_AS(ion_temperature_from_mode_temperatures(c.modes, {1.0}), Error);
}

TEST_CASE("spots csv round trip and parse errors")
{
    const Crystal c = string8();
    SynthesisOptions opt;
    opt.radial = true;
    const auto spots = synthesize_spots(3.6e-3, c.state, c.gamma, c.trap, ca, ImagingConfig{}, opt);
    std::stringstream ss;
    write_spots_csv(ss, spots);
    const auto back = read_spots_csv(ss);
    REQUIRE(back.size() == spots.size());
    for (std::size_t i = 0; i < spots.size(); ++i) {
        CHECK(back[i].ion_index == spots[i].ion_index);
        CHECK(back[i].axis == spots[i].axis);
        REQUIRE(back[i].profile.size() == spots[i].profile.size());
        for (std::size_t k = 0; k < spots[i].profile.size(); ++k) {
            CHECK(back[i].profile[k].pixel == spots[i].profile[k].pixel);
            CHECK(back[i].profile[k].counts == spots[i].profile[k].counts);
        }
    }

    auto code_and_message = [](const std::string& text) -> std::pair<ErrorCode, std::string> {
        std::istringstream in(text);
        try {
            read_spots_csv(in);
        } catch (const Error& e) {
            return {e.code(), e.what()};
        }
        return {ErrorCode::Io, ""};
    };
    auto [c1, m1] = code_and_message("0, axial, 1, 5\n");
    CHECK(c1 == ErrorCode::Parse);
    CHECK(m1.find("line 1") != std::string::npos);
    auto [c2, m2] = code_and_message("ion_index, axis, pixel, counts\n0, axial, 1, 5\n0, sideways, 2, 5\n");
    CHECK(c2 == ErrorCode::Parse);
    CHECK(m2.find("line 3") != std::string::npos);
    auto [c3, m3] = code_and_message("ion_index, axis, pixel, counts\n0, axial, x, 5\n");
    CHECK(c3 == ErrorCode::Parse);
    CHECK(m3.find("line 2") != std::string::npos);
    auto [c4, m4] = code_and_message("");
    CHECK(c4 == ErrorCode::Parse);
}
