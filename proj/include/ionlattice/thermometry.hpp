#pragma once

#include "ionlattice/crystal.hpp"
#include "ionlattice/error.hpp"
#include "ionlattice/physics.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

// Temperature from fluorescence spot widths. Each ion's spot, integrated along
// the orthogonal image direction, is a Gaussian of variance
//   sigma^2 = kB T gamma^2 / (M omega_z^2) + sigma_res^2.
namespace ionlattice::thermometry {

enum class Axis { Axial, Radial };

const char* to_string(Axis axis);

struct ImagingConfig {
    double sigma_res_axial = 2.23e-6;   // m, point-spread standard deviation
    double sigma_res_radial = 2.09e-6;  // m
    double pixel_pitch = 0.92e-6;       // m per pixel in the object plane

    double sigma_res(Axis axis) const
    {
        return axis == Axis::Axial ? sigma_res_axial : sigma_res_radial;
    }
    void validate() const;
};

struct ProfileSample {
    double pixel = 0.0;   // pixel coordinate along the profile
    double counts = 0.0;
};

struct ParameterCi {
    double amplitude = 0.0;
    double center = 0.0;  // m
    double sigma = 0.0;   // m
    double offset = 0.0;
};

struct GaussianFit {
    double amplitude = 0.0;  // counts
    double center = 0.0;     // m
    double sigma = 0.0;      // m
    double offset = 0.0;     // counts
    ParameterCi ci95;        // half-widths
    double chi2_reduced = 0.0;
    int iterations = 0;
};

enum class FitWeighting {
    Uniform,  // ordinary least squares
    Poisson,  // weights 1 / model counts, refined once from the first fit
};

// Levenberg-Marquardt fit of A exp(-(x - c)^2 / (2 sigma^2)) + B with x in
// pixels; centre and width are returned in metres. Confidence half-widths are
// 1.96 sqrt(diag((J^T W J)^-1) chi2_red).
//
// Throws DegenerateFit for fewer than 5 samples, a constant profile, or a
// width collapsing below a quarter pixel, NonConvergence when the iteration
// stalls.
GaussianFit fit_gaussian_profile(const std::vector<ProfileSample>& profile, double pixel_pitch,
                                 FitWeighting weighting = FitWeighting::Poisson);

struct SpotMeasurement {
    int ion_index = 0;
    Axis axis = Axis::Axial;
    std::vector<ProfileSample> profile;
    double fitted_center = 0.0;  // m
    double fitted_sigma = 0.0;   // m
    double sigma_ci95 = 0.0;     // m
    bool overlapping = false;    // another ion's image lies within 2 sigma
};

// Fit the spot's profile and fill in the fitted fields.
void measure_spot(SpotMeasurement& spot, const ImagingConfig& imaging,
                  FitWeighting weighting = FitWeighting::Poisson);

struct TemperatureEstimate {
    double temperature = 0.0;  // K
    double ci95 = 0.0;         // K
    // sigma_meas^2 - model sigma^2 at the fitted T, m^2, in input order of the
    // spots that were used.
    std::vector<double> per_ion_residuals;
    std::vector<int> used_ions;
    double chi2_reduced = 0.0;
};

class NegativeVarianceError : public Error {
public:
    NegativeVarianceError(std::vector<double> deficits, const std::string& what)
        : Error(ErrorCode::NonPhysical, what), deficits_(std::move(deficits)) {}

    // sigma_res^2 - sigma_meas^2 per spot, m^2 (positive means too narrow).
    const std::vector<double>& deficits() const noexcept { return deficits_; }

private:
    std::vector<double> deficits_;
};

struct EstimateOptions {
    bool include_axial = true;
    bool include_radial = false;  // radial gammas depend on the asymmetry bias
};

// Weighted least squares of the thermal variance sigma^2 - sigma_res^2
// against kB gamma^2 / (M omega_z^2), through the origin. Each spot is
// weighted by the inverse variance of its sigma^2, (2 sigma delta_sigma)^2
// with delta_sigma = sigma_ci95 / 1.96. The estimate is clamped at T = 0.
//
// Throws NegativeVarianceError when every used spot is narrower than the
// resolution.
TemperatureEstimate estimate_temperature(const std::vector<SpotMeasurement>& spots,
                                         const crystal::GammaTable& gamma, const TrapConfig& trap,
                                         const IonSpecies& species, const ImagingConfig& imaging,
                                         const EstimateOptions& options = {});

struct SynthesisOptions {
    double photon_budget = 2e4;  // expected photons per spot
    double background = 5.0;     // counts per pixel
    std::uint64_t seed = 1;
    bool poisson_noise = true;
    bool axial = true;
    bool radial = false;
    double half_width_sigmas = 6.0;  // profile extent around the spot centre
};

// Gaussian spot profiles point-sampled on the pixel grid, with the variance
// from spot_variance_model. The image plane holds z and the radial direction
// at 45 degrees between x and y. Deterministic for a given seed.
std::vector<SpotMeasurement> synthesize_spots(double temperature,
                                              const crystal::CrystalState& state,
                                              const crystal::GammaTable& gamma,
                                              const TrapConfig& trap, const IonSpecies& species,
                                              const ImagingConfig& imaging,
                                              const SynthesisOptions& options = {});

// T_{m,u} = sum_p (b_{m,u}^p)^2 T_p, N x 3.
Eigen::MatrixXd ion_temperature_from_mode_temperatures(const crystal::ModeDecomposition& modes,
                                                       const std::vector<double>& mode_temperatures);

// Spot profiles as CSV with the header `ion_index, axis, pixel, counts`.
// Rows of one (ion, axis) pair are gathered into one spot in order of first
// appearance. Throws ErrorCode::Parse naming the line on malformed input.
std::vector<SpotMeasurement> read_spots_csv(std::istream& in);
void write_spots_csv(std::ostream& out, const std::vector<SpotMeasurement>& spots);

}  // namespace ionlattice::thermometry
