#pragma once

#include "ionlattice/ensemble.hpp"
#include "ionlattice/physics.hpp"
#include "ionlattice/thermometry.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

// Configuration-driven front end. Configs are YAML (JSON is accepted, it is a
// YAML subset). Every physical scalar carries its unit in the file, e.g.
// "85 kHz", "866 nm", "25 mK", "2 us"; frequencies given in Hz are converted
// to rad/s. Unknown keys and missing units are rejected with the key named.
namespace ionlattice::cli {

inline constexpr int schema_version = 1;

enum ExitCode : int {
    Success = 0,
    ConfigError = 2,
    SolverError = 3,
    IoError = 4,
};

enum class Dimension {
    Dimensionless,
    Length,
    Time,
    Frequency,         // Hz, kept as cycles per second
    AngularFrequency,  // Hz-family units, times 2 pi
    Rate,              // 1/s
    Temperature,
    Mass,
    Angle,
    Intensity,
    Area,
};

// Parse "value unit" into SI. Throws ErrorCode::Config naming key.
double parse_quantity(const std::string& text, Dimension dim, const std::string& key);

struct ThermometrySettings {
    thermometry::ImagingConfig imaging;
    bool include_radial = false;
    // Synthetic spots
    std::optional<double> temperature;  // K
    double photon_budget = 2e4;
    double background = 5.0;
    bool poisson_noise = true;
    std::optional<std::uint64_t> seed;
};

struct RunConfig {
    IonSpecies species;
    TrapConfig trap;
    double radial_asymmetry = 0.0;
    LatticeConfig lattice;  // depth = maximum depth
    ensemble::BeamProfile beam;
    RampProfile ramp;
    std::size_t n_ions = 1;
    std::uint64_t seed = 0;
    int starts = 12;
    std::optional<double> initial_temperature;  // K, for scatter
    double pumping_efficiency = 1.0;
    int scatter_points = 26;
    std::optional<double> modes_nu_max;  // Hz, default from the lattice depth
    double modes_nu_min = 0.0;  // Hz, 0 = default
    int modes_points = 200;
    ThermometrySettings thermometry;

    std::string canonical_json;  // parsed SI values, sorted keys
    std::string hash;            // FNV-1a 64 of canonical_json, hex
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

std::string fnv1a_hex(const std::string& data);

struct GridSpec {
    double start = 0.0;
    double stop = 0.0;
    int count = 0;
    bool geometric = false;

    std::vector<double> values() const;
};

// "start:stop:count:{lin|geom}"; start may be 0 for geom, in which case the
// grid is 0 followed by count - 1 geometric points from stop / 500 to stop.
GridSpec parse_grid(const std::string& text);

// Commands. Each writes into out_dir (created if missing) and throws
// ionlattice::Error on failure; run() maps errors to exit codes.
void cmd_equilibrium(const RunConfig& config, const std::filesystem::path& out_dir);
// grid in MHz of lattice vibrational frequency.
void cmd_modes(const RunConfig& config, const std::filesystem::path& out_dir,
               const std::optional<GridSpec>& grid);
// grid in mK of lattice depth.
void cmd_scatter(const RunConfig& config, const std::filesystem::path& out_dir,
                 const std::optional<GridSpec>& grid);
void cmd_thermometry(const RunConfig& config, const std::filesystem::path& out_dir,
                     const std::filesystem::path& spots_csv);
void cmd_micromotion(const RunConfig& config, const std::filesystem::path& out_dir);
void cmd_synthesize_spots(const RunConfig& config, const std::filesystem::path& out_dir);

int exit_code_for(const std::exception& e);

// Full command line entry point.
int run(int argc, char** argv);

}  // namespace ionlattice::cli
