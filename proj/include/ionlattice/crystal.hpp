#pragma once

#include "ionlattice/physics.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

// Coulomb crystals in the pseudo-potential of a linear trap, optionally with
// a standing wave U0 sin^2(kz + phase) along the trap axis.
//
// Internally lengths are in units of
//   l = (e^2 / (4 pi eps0 M omega_z^2))^(1/3),
// frequencies in omega_z and energies in M omega_z^2 l^2, so the dimensionless
// potential reads
//   sum_i (ax x_i^2 + ay y_i^2 + z_i^2)/2 + sum_{i<j} 1/r_ij
//     + u0 sum_i sin^2(kappa z_i + phase)
// with kappa = k l (about 190 for the 866 nm lattice). Everything in the
// public interface is SI.
namespace ionlattice::crystal {

// N x 3 matrix of ion positions in metres, columns (x, y, z).
using Positions = Eigen::Matrix<double, Eigen::Dynamic, 3>;

double length_scale(const TrapConfig& trap, const IonSpecies& species);

// Total potential energy in joules. Throws SingularConfiguration when two
// ions coincide.
double total_potential(const Positions& positions, const TrapConfig& trap,
                       const IonSpecies& species,
                       const std::optional<LatticeConfig>& lattice = std::nullopt);

struct CrystalState {
    Positions positions;         // m
    double potential_value = 0;  // J
    double lattice_depth = 0;    // J, signed, 0 without lattice
    double gradient_norm = 0;    // max-norm of the dimensionless gradient
    double min_curvature = 0;    // smallest dimensionless Hessian eigenvalue
    bool saddle = false;         // min_curvature < -1e-8
    int iterations = 0;
    int saddle_escapes = 0;      // see EquilibriumOptions::escape_saddles

    std::size_t ion_count() const { return static_cast<std::size_t>(positions.rows()); }
};

struct EquilibriumOptions {
    std::optional<Positions> initial_guess;  // m; disables the multistart
    int starts = 12;                         // random starts when no guess is given
    std::uint64_t seed = 1;
    double gradient_tolerance = 1e-10;       // dimensionless max-norm
    int max_iterations = 400;
    // When the minimizer stops on a saddle, displace along the most negative
    // curvature direction (both signs, lower energy wins) and minimize again.
    // The number of such escapes is reported in the state.
    bool escape_saddles = false;
};

// Local minimum of total_potential. Without an initial guess the lowest of
// options.starts seeded random starts is returned, with ions sorted by z and
// the x/y signs fixed so that equal inputs give identical positions. With a
// guess the ion order of the guess is kept.
//
// Throws ConvergenceError (last iterate attached) when the gradient does not
// reach the tolerance. A converged saddle is returned with saddle = true.
CrystalState equilibrium(std::size_t n_ions, const TrapConfig& trap, const IonSpecies& species,
                         const std::optional<LatticeConfig>& lattice = std::nullopt,
                         const EquilibriumOptions& options = {});

struct ModeDecomposition {
    Eigen::VectorXd eigenvalues;  // lambda_p, ascending, Hessian / (M omega_z^2)
    Eigen::VectorXd frequencies;  // omega_p = omega_z sqrt(lambda_p), rad/s
    // 3N x 3N, column p is mode p. Rows are stacked [x_1..x_N, y_1..y_N, z_1..z_N].
    Eigen::MatrixXd coordinates;
    double omega_z = 0;

    std::size_t ion_count() const { return static_cast<std::size_t>(eigenvalues.size() / 3); }
};

// Dimensionless Hessian of the total potential at the given positions.
Eigen::MatrixXd hessian(const Positions& positions, const TrapConfig& trap,
                        const IonSpecies& species,
                        const std::optional<LatticeConfig>& lattice = std::nullopt);

// Throws UnstableConfiguration when an eigenvalue is below -1e-8.
ModeDecomposition normal_modes(const CrystalState& state, const TrapConfig& trap,
                               const IonSpecies& species,
                               const std::optional<LatticeConfig>& lattice = std::nullopt);

struct GammaTable {
    Eigen::MatrixXd gamma;                   // N x 3, columns x, y, z
    Eigen::VectorXd gamma_radial_projected;  // N, along (x + y)/sqrt(2)
};

// gamma^2_{m,u} = sum_p (b_{m,u}^p)^2 / lambda_p. Throws Divergence naming the
// mode when some lambda_p <= 1e-12.
GammaTable gamma_parameters(const ModeDecomposition& modes);

// Expected spot variance in m^2: kB T gamma^2 / (M omega_z^2) + sigma_res^2.
double spot_variance_model(double temperature, double gamma, const TrapConfig& trap,
                           const IonSpecies& species, double sigma_res);

enum class StructureKind { Single, Linear, Planar, ThreeDimensional };

struct StructureInfo {
    StructureKind kind = StructureKind::Single;
    // Ions off the best plane through any three ions; 0 unless 3-D.
    int out_of_plane = 0;
    // Smallest-variance principal axis. For a string, the stiffer radial axis.
    Eigen::Vector3d plane_normal = Eigen::Vector3d::UnitX();
};

// tolerance is in metres; positions closer than that to a line or plane
// count as lying on it.
StructureInfo classify_structure(const Positions& positions, const TrapConfig& trap,
                                 double tolerance = 1e-9);

const char* to_string(StructureKind kind);

// Fraction of a mode's weight inside the plane with the given unit normal,
// and along z.
double plane_weight(const Eigen::VectorXd& mode, const Eigen::Vector3d& normal);
double axial_weight(const Eigen::VectorXd& mode);

struct CrossingFlag {
    double nu_latt = 0;   // Hz, where the ambiguous step ends
    std::size_t step = 0; // index into the output grid
    int branch = 0;       // branch id that received mode `chosen`
    int chosen = 0;       // mode index (ascending frequency) at that step
    int alternative = 0;  // equally plausible mode index
    double overlap_chosen = 0;
    double overlap_alternative = 0;
};

struct ContinuationOptions {
    double overlap_threshold = 0.5;
    double ambiguity_margin = 1e-3;
    int max_refinement = 6;  // midpoint halvings per grid interval
    EquilibriumOptions equilibrium;  // used for the first grid point only
};

struct ContinuationResult {
    std::vector<double> nu_latt;  // Hz, the requested grid
    std::vector<double> depth;    // J, signed
    std::vector<Positions> equilibria;
    // Per grid point, indexed by branch id (branch b starts as mode b of the
    // first grid point).
    std::vector<Eigen::VectorXd> frequencies;   // Hz
    std::vector<Eigen::MatrixXd> coordinates;   // column b = branch b
    std::vector<Eigen::VectorXd> plane_weights;
    std::vector<Eigen::VectorXd> axial_weights;
    Eigen::Vector3d plane_normal = Eigen::Vector3d::UnitX();
    std::vector<CrossingFlag> crossings;
    int extra_points = 0;  // grid points inserted by step halving
    // Steps where the warm start first converged to a saddle and was pushed
    // off it (a lattice well of some ion disappeared).
    int saddle_escapes = 0;
    bool saddle_encountered = false;  // a saddle remained after escaping

    std::size_t branch_count() const
    {
        return frequencies.empty() ? 0 : static_cast<std::size_t>(frequencies.front().size());
    }
};

// nu = 0 followed by points - 1 geometrically spaced values from nu_min to
// nu_max (Hz). nu_min <= 0 selects nu_max / 500.
std::vector<double> lattice_frequency_grid(double nu_max, int points = 200, double nu_min = 0.0);

// Depth continuation along an ascending grid of lattice vibrational
// frequencies. lattice supplies the wavevector, detuning sign and phase; its
// depth is ignored. Each point warm-starts from the previous equilibrium and
// modes are stitched by eigenvector overlap.
ContinuationResult continuation(std::size_t n_ions, const TrapConfig& trap,
                                const IonSpecies& species, const LatticeConfig& lattice,
                                const std::vector<double>& nu_grid,
                                const ContinuationOptions& options = {});

// Same, on lattice_frequency_grid(nu(lattice_max), steps).
ContinuationResult continuation(std::size_t n_ions, const TrapConfig& trap,
                                const IonSpecies& species, const LatticeConfig& lattice_max,
                                int steps, const ContinuationOptions& options = {});

}  // namespace ionlattice::crystal
