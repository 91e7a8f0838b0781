#include "ionlattice/crystal.hpp"

#include "ionlattice/error.hpp"
#include "ionlattice/pendulum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <tuple>

namespace ionlattice::crystal {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Dimensionless model; see the header comment.
struct Model {
    std::size_t n = 0;
    double ax = 1.0;
    double ay = 1.0;
    double u0 = 0.0;
    double kappa = 0.0;
    double phase = 0.0;
    double ell = 1.0;
    double energy_unit = 1.0;  // M omega_z^2 l^2
};

Model make_model(std::size_t n, const TrapConfig& trap, const IonSpecies& species,
                 const std::optional<LatticeConfig>& lattice)
{
    trap.validate();
    if (!(species.mass > 0.0))
        throw Error(ErrorCode::OutOfDomain, "crystal: species mass must be positive");
    Model m;
    m.n = n;
    m.ax = (trap.omega_x / trap.omega_z) * (trap.omega_x / trap.omega_z);
    m.ay = (trap.omega_y / trap.omega_z) * (trap.omega_y / trap.omega_z);
    m.ell = length_scale(trap, species);
    m.energy_unit = species.mass * trap.omega_z * trap.omega_z * m.ell * m.ell;
    if (lattice) {
        m.u0 = lattice->depth / m.energy_unit;
        m.kappa = lattice->wavevector * m.ell;
        m.phase = lattice->phase;
    }
    return m;
}

VectorXd pack(const Positions& p, double ell)
{
    const auto n = p.rows();
    VectorXd q(3 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        q(i) = p(i, 0) / ell;
        q(n + i) = p(i, 1) / ell;
        q(2 * n + i) = p(i, 2) / ell;
    }
    return q;
}

Positions unpack(const VectorXd& q, double ell)
{
    const auto n = q.size() / 3;
    Positions p(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        p(i, 0) = q(i) * ell;
        p(i, 1) = q(n + i) * ell;
        p(i, 2) = q(2 * n + i) * ell;
    }
    return p;
}

Eigen::Vector3d ion(const VectorXd& q, Eigen::Index n, Eigen::Index i)
{
    return {q(i), q(n + i), q(2 * n + i)};
}

[[noreturn]] void coincident(Eigen::Index i, Eigen::Index j)
{
    std::ostringstream os;
    os << "crystal: ions " << i << " and " << j << " coincide";
    throw Error(ErrorCode::SingularConfiguration, os.str());
}

double energy(const Model& m, const VectorXd& q)
{
    const auto n = static_cast<Eigen::Index>(m.n);
    double e = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = q(i), y = q(n + i), z = q(2 * n + i);
        e += 0.5 * (m.ax * x * x + m.ay * y * y + z * z);
        if (m.u0 != 0.0) {
            const double s = std::sin(m.kappa * z + m.phase);
            e += m.u0 * s * s;
        }
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double d = (ion(q, n, i) - ion(q, n, j)).norm();
            if (!(d > 1e-12))
                coincident(i, j);
            e += 1.0 / d;
        }
    }
    return e;
}

VectorXd gradient(const Model& m, const VectorXd& q)
{
    const auto n = static_cast<Eigen::Index>(m.n);
    VectorXd g(3 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        g(i) = m.ax * q(i);
        g(n + i) = m.ay * q(n + i);
        g(2 * n + i) = q(2 * n + i);
        if (m.u0 != 0.0)
            g(2 * n + i) += m.u0 * m.kappa * std::sin(2.0 * (m.kappa * q(2 * n + i) + m.phase));
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const Eigen::Vector3d r = ion(q, n, i) - ion(q, n, j);
            const double d = r.norm();
            if (!(d > 1e-12))
                coincident(i, j);
            const Eigen::Vector3d f = r / (d * d * d);
            for (int a = 0; a < 3; ++a) {
                g(a * n + i) -= f(a);
                g(a * n + j) += f(a);
            }
        }
    }
    return g;
}

MatrixXd hessian_of(const Model& m, const VectorXd& q)
{
    const auto n = static_cast<Eigen::Index>(m.n);
    MatrixXd h = MatrixXd::Zero(3 * n, 3 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        h(i, i) = m.ax;
        h(n + i, n + i) = m.ay;
        h(2 * n + i, 2 * n + i) = 1.0;
        if (m.u0 != 0.0) {
            h(2 * n + i, 2 * n + i) += 2.0 * m.u0 * m.kappa * m.kappa *
                                       std::cos(2.0 * (m.kappa * q(2 * n + i) + m.phase));
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const Eigen::Vector3d r = ion(q, n, i) - ion(q, n, j);
            const double d2 = r.squaredNorm();
            const double d = std::sqrt(d2);
            if (!(d > 1e-12))
                coincident(i, j);
            const double d5 = d2 * d2 * d;
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) {
                    const double c = (3.0 * r(a) * r(b) - (a == b ? d2 : 0.0)) / d5;
                    h(a * n + i, b * n + i) += c;
                    h(a * n + j, b * n + j) += c;
                    h(a * n + i, b * n + j) -= c;
                    h(a * n + j, b * n + i) -= c;
                }
            }
        }
    }
    return h;
}

struct Minimum {
    VectorXd q;
    double value = 0.0;
    double gradient_norm = 0.0;
    int iterations = 0;
    int escapes = 0;
    bool converged = false;
};

// Damped Newton: the step uses the Hessian with eigenvalues replaced by
// max(|lambda|, floor), so it is a descent direction away from minima too,
// followed by Armijo backtracking.
Minimum minimize(const Model& m, VectorXd q, double tol, int max_iterations)
{
    const double max_step = m.u0 != 0.0 ? std::min(1.0, 0.25 / m.kappa) : 1.0;
    Minimum out;
    double f = energy(m, q);
    VectorXd g = gradient(m, q);
    double gn = g.cwiseAbs().maxCoeff();
    int iter = 0;
    for (; iter < max_iterations && gn > tol; ++iter) {
        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(hessian_of(m, q));
        const VectorXd& lam = eig.eigenvalues();
        const double floor = 1e-8 * std::max(1.0, lam.cwiseAbs().maxCoeff());
        VectorXd coeff = eig.eigenvectors().transpose() * g;
        for (Eigen::Index k = 0; k < lam.size(); ++k)
            coeff(k) /= std::max(std::abs(lam(k)), floor);
        VectorXd d = -(eig.eigenvectors() * coeff);
        const double longest = d.cwiseAbs().maxCoeff();
        if (longest > max_step)
            d *= max_step / longest;

        const double slope = g.dot(d);
        const double slack = 1e-13 * (std::abs(f) + 1.0);
        double alpha = 1.0;
        bool moved = false;
        for (int k = 0; k < 60; ++k, alpha *= 0.5) {
            const VectorXd trial = q + alpha * d;
            double ft;
            try {
                ft = energy(m, trial);
            } catch (const Error&) {
                continue;  // stepped onto another ion
            }
            if (!std::isfinite(ft))
                continue;
            const bool armijo = ft <= f + 1e-4 * alpha * slope;
            bool accept = armijo;
            VectorXd gt;
            if (!accept && ft <= f + slack) {
                // Below rounding of f: judge by the gradient instead.
                gt = gradient(m, trial);
                accept = gt.cwiseAbs().maxCoeff() < gn;
            }
            if (accept) {
                q = trial;
                f = ft;
                g = gt.size() ? gt : gradient(m, q);
                gn = g.cwiseAbs().maxCoeff();
                moved = true;
                break;
            }
        }
        if (!moved)
            break;
    }
    out.q = std::move(q);
    out.value = f;
    out.gradient_norm = gn;
    out.iterations = iter;
    out.converged = gn <= tol;
    return out;
}

// Newton can settle on a saddle, e.g. when a deepening lattice folds away the
// well an ion sat in. Push along the most negative curvature direction and
// minimize again until the stationary point is a minimum.
Minimum minimize_to_minimum(const Model& m, const VectorXd& q0, double tol, int max_iterations)
{
    Minimum r = minimize(m, q0, tol, max_iterations);
    const double kick = m.u0 != 0.0 ? std::min(0.1, 0.3 / m.kappa) : 0.1;
    for (int escape = 0; escape < 20 && r.converged; ++escape) {
        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(hessian_of(m, r.q));
        if (eig.eigenvalues()(0) >= -1e-8)
            break;
        const VectorXd v = eig.eigenvectors().col(0);
        std::optional<Minimum> best;
        for (double sign : {1.0, -1.0}) {
            Minimum t = minimize(m, r.q + sign * kick * v / v.cwiseAbs().maxCoeff(), tol,
                                 max_iterations);
            t.iterations += r.iterations;
            t.escapes = r.escapes + 1;
            if (t.converged && (!best || t.value < best->value))
                best = std::move(t);
        }
        if (!best)
            break;
        r = std::move(*best);
    }
    return r;
}

// Sort by z (then x, y) and fix the x/y signs, both symmetries of the
// potential.
VectorXd canonical(const VectorXd& q)
{
    const auto n = q.size() / 3;
    constexpr double tol = 1e-9;
    std::vector<Eigen::Index> order(n);
    for (Eigen::Index i = 0; i < n; ++i)
        order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return q(2 * n + a) < q(2 * n + b); });
    double sign[2] = {1.0, 1.0};
    for (int axis = 0; axis < 2; ++axis) {
        for (Eigen::Index i : order) {
            const double v = q(axis * n + i);
            if (std::abs(v) > tol) {
                sign[axis] = v > 0.0 ? 1.0 : -1.0;
                break;
            }
        }
    }
    VectorXd flipped = q;
    flipped.head(n) *= sign[0];
    flipped.segment(n, n) *= sign[1];
    auto key = [&](Eigen::Index i) {
        return std::tuple(flipped(2 * n + i), flipped(i), flipped(n + i));
    };
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        const auto [za, xa, ya] = key(a);
        const auto [zb, xb, yb] = key(b);
        if (std::abs(za - zb) > tol)
            return za < zb;
        if (std::abs(xa - xb) > tol)
            return xa < xb;
        return ya < yb;
    });
    VectorXd out(q.size());
    for (Eigen::Index k = 0; k < n; ++k) {
        const Eigen::Index i = order[k];
        out(k) = flipped(i);
        out(n + k) = flipped(n + i);
        out(2 * n + k) = flipped(2 * n + i);
    }
    return out;
}

VectorXd random_start(std::size_t n, std::mt19937_64& rng)
{
    const double spread_z = 0.6 * std::pow(static_cast<double>(n), 0.6);
    const double spread_r = 0.5;
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto nn = static_cast<Eigen::Index>(n);
    VectorXd q(3 * nn);
    for (Eigen::Index i = 0; i < nn; ++i) {
        q(i) = spread_r * normal(rng);
        q(nn + i) = spread_r * normal(rng);
        q(2 * nn + i) = spread_z * normal(rng);
    }
    return q;
}

CrystalState make_state(const Model& m, const Minimum& best, const std::optional<LatticeConfig>& lattice)
{
    CrystalState s;
    s.positions = unpack(best.q, m.ell);
    s.potential_value = best.value * m.energy_unit;
    s.lattice_depth = lattice ? lattice->depth : 0.0;
    s.gradient_norm = best.gradient_norm;
    s.iterations = best.iterations;
    s.saddle_escapes = best.escapes;
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(hessian_of(m, best.q), Eigen::EigenvaluesOnly);
    s.min_curvature = eig.eigenvalues()(0);
    s.saddle = s.min_curvature < -1e-8;
    return s;
}

double sign_fix(const Eigen::Ref<const VectorXd>& v)
{
    Eigen::Index k;
    v.cwiseAbs().maxCoeff(&k);
    return v(k) < 0.0 ? -1.0 : 1.0;
}

}  // namespace

double length_scale(const TrapConfig& trap, const IonSpecies& species)
{
    if (!(trap.omega_z > 0.0))
        throw Error(ErrorCode::OutOfDomain, "length_scale: omega_z must be positive");
    return std::cbrt(constants::coulomb_constant_e2 /
                     (species.mass * trap.omega_z * trap.omega_z));
}

double total_potential(const Positions& positions, const TrapConfig& trap,
                       const IonSpecies& species, const std::optional<LatticeConfig>& lattice)
{
    const Model m = make_model(static_cast<std::size_t>(positions.rows()), trap, species, lattice);
    return energy(m, pack(positions, m.ell)) * m.energy_unit;
}

CrystalState equilibrium(std::size_t n_ions, const TrapConfig& trap, const IonSpecies& species,
                         const std::optional<LatticeConfig>& lattice,
                         const EquilibriumOptions& options)
{
    if (n_ions == 0)
        throw Error(ErrorCode::OutOfDomain, "equilibrium: need at least one ion");
    const Model m = make_model(n_ions, trap, species, lattice);

    if (options.initial_guess) {
        if (static_cast<std::size_t>(options.initial_guess->rows()) != n_ions)
            throw Error(ErrorCode::OutOfDomain, "equilibrium: initial guess has the wrong ion count");
        const VectorXd q0 = pack(*options.initial_guess, m.ell);
        const Minimum r =
            options.escape_saddles
                ? minimize_to_minimum(m, q0, options.gradient_tolerance, options.max_iterations)
                : minimize(m, q0, options.gradient_tolerance, options.max_iterations);
        if (!r.converged) {
            const Positions p = unpack(r.q, m.ell);
            throw ConvergenceError(std::vector<double>(p.data(), p.data() + p.size()),
                                   r.gradient_norm, "equilibrium: gradient did not converge");
        }
        return make_state(m, r, lattice);
    }

    if (options.starts < 1)
        throw Error(ErrorCode::OutOfDomain, "equilibrium: need at least one start");
    std::mt19937_64 rng(options.seed);
    std::optional<Minimum> best;
    Minimum last;
    for (int s = 0; s < options.starts; ++s) {
        VectorXd q0 = random_start(n_ions, rng);
        if (n_ions == 1)
            q0.setZero();
        Minimum r =
            options.escape_saddles
                ? minimize_to_minimum(m, q0, options.gradient_tolerance, options.max_iterations)
                : minimize(m, q0, options.gradient_tolerance, options.max_iterations);
        if (!r.converged) {
            last = std::move(r);
            continue;
        }
        if (!best || r.value < best->value - 1e-12 * std::abs(best->value))
            best = std::move(r);
    }
    if (!best) {
        const Positions p = unpack(last.q, m.ell);
        throw ConvergenceError(std::vector<double>(p.data(), p.data() + p.size()),
                               last.gradient_norm, "equilibrium: no start converged");
    }
    best->q = canonical(best->q);
    return make_state(m, *best, lattice);
}

Eigen::MatrixXd hessian(const Positions& positions, const TrapConfig& trap,
                        const IonSpecies& species, const std::optional<LatticeConfig>& lattice)
{
    const Model m = make_model(static_cast<std::size_t>(positions.rows()), trap, species, lattice);
    return hessian_of(m, pack(positions, m.ell));
}

ModeDecomposition normal_modes(const CrystalState& state, const TrapConfig& trap,
                               const IonSpecies& species,
                               const std::optional<LatticeConfig>& lattice)
{
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(hessian(state.positions, trap, species, lattice));
    if (eig.info() != Eigen::Success)
        throw Error(ErrorCode::NonConvergence, "normal_modes: eigensolver failed");
    if (eig.eigenvalues()(0) < -1e-8) {
        std::ostringstream os;
        os << "normal_modes: negative eigenvalue " << eig.eigenvalues()(0)
           << ", the configuration is a saddle";
        throw Error(ErrorCode::UnstableConfiguration, os.str());
    }
    ModeDecomposition md;
    md.omega_z = trap.omega_z;
    md.eigenvalues = eig.eigenvalues();
    md.coordinates = eig.eigenvectors();
    for (Eigen::Index p = 0; p < md.coordinates.cols(); ++p)
        md.coordinates.col(p) *= sign_fix(md.coordinates.col(p));
    md.frequencies = md.eigenvalues.cwiseMax(0.0).cwiseSqrt() * trap.omega_z;
    return md;
}

GammaTable gamma_parameters(const ModeDecomposition& modes)
{
    const auto n = static_cast<Eigen::Index>(modes.ion_count());
    for (Eigen::Index p = 0; p < modes.eigenvalues.size(); ++p) {
        if (!(modes.eigenvalues(p) > 1e-12)) {
            std::ostringstream os;
            os << "gamma_parameters: mode " << p << " has eigenvalue " << modes.eigenvalues(p)
               << " (soft mode, gamma diverges)";
            throw Error(ErrorCode::Divergence, os.str());
        }
    }
    GammaTable t;
    t.gamma.resize(n, 3);
    t.gamma_radial_projected.resize(n);
    const VectorXd inv = modes.eigenvalues.cwiseInverse();
    for (Eigen::Index m = 0; m < n; ++m) {
        for (int u = 0; u < 3; ++u)
            t.gamma(m, u) = std::sqrt(modes.coordinates.row(u * n + m).cwiseAbs2().dot(inv));
        const VectorXd sum = modes.coordinates.row(m) + modes.coordinates.row(n + m);
        t.gamma_radial_projected(m) = std::sqrt(0.5 * sum.cwiseAbs2().dot(inv));
    }
    return t;
}

double spot_variance_model(double temperature, double gamma, const TrapConfig& trap,
                           const IonSpecies& species, double sigma_res)
{
    if (!(temperature >= 0.0))
        throw Error(ErrorCode::OutOfDomain, "spot_variance_model: temperature must be >= 0");
    return constants::boltzmann * temperature / (species.mass * trap.omega_z * trap.omega_z) *
               gamma * gamma +
           sigma_res * sigma_res;
}

const char* to_string(StructureKind kind)
{
    switch (kind) {
    case StructureKind::Single: return "single";
    case StructureKind::Linear: return "linear";
    case StructureKind::Planar: return "planar";
    case StructureKind::ThreeDimensional: return "three-dimensional";
    }
    return "unknown";
}

StructureInfo classify_structure(const Positions& positions, const TrapConfig& trap,
                                 double tolerance)
{
    StructureInfo info;
    info.plane_normal =
        trap.omega_x >= trap.omega_y ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
    const auto n = positions.rows();
    if (n <= 1)
        return info;
    const Eigen::RowVector3d mean = positions.colwise().mean();
    const MatrixXd centered = positions.rowwise() - mean;
    Eigen::JacobiSVD<MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Eigen::Vector3d spread = svd.singularValues() / std::sqrt(static_cast<double>(n));
    int rank = 0;
    for (int k = 0; k < 3; ++k)
        rank += spread(k) > tolerance ? 1 : 0;
    if (rank <= 1) {
        info.kind = StructureKind::Linear;
        return info;
    }
    Eigen::Vector3d normal = svd.matrixV().col(2);
    normal *= sign_fix(normal);
    info.plane_normal = normal;
    if (rank == 2) {
        info.kind = StructureKind::Planar;
        return info;
    }
    info.kind = StructureKind::ThreeDimensional;
    int best = 3;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            for (Eigen::Index k = j + 1; k < n; ++k) {
                const Eigen::Vector3d a = (positions.row(j) - positions.row(i)).transpose();
                const Eigen::Vector3d b = (positions.row(k) - positions.row(i)).transpose();
                Eigen::Vector3d c = a.cross(b);
                if (c.norm() <= tolerance * std::max(a.norm(), b.norm()))
                    continue;  // collinear triple
                c.normalize();
                int count = 0;
                for (Eigen::Index l = 0; l < n; ++l) {
                    const Eigen::Vector3d r = (positions.row(l) - positions.row(i)).transpose();
                    count += std::abs(c.dot(r)) <= tolerance ? 1 : 0;
                }
                best = std::max(best, count);
            }
        }
    }
    info.out_of_plane = static_cast<int>(n) - best;
    return info;
}

double plane_weight(const Eigen::VectorXd& mode, const Eigen::Vector3d& normal)
{
    const auto n = mode.size() / 3;
    double off = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double c = normal(0) * mode(i) + normal(1) * mode(n + i) + normal(2) * mode(2 * n + i);
        off += c * c;
    }
    return 1.0 - off / mode.squaredNorm();
}

double axial_weight(const Eigen::VectorXd& mode)
{
    const auto n = mode.size() / 3;
    return mode.tail(n).squaredNorm() / mode.squaredNorm();
}

std::vector<double> lattice_frequency_grid(double nu_max, int points, double nu_min)
{
    if (!(nu_max > 0.0) || points < 2)
        throw Error(ErrorCode::OutOfDomain, "lattice_frequency_grid: need nu_max > 0, points >= 2");
    if (nu_min <= 0.0)
        nu_min = nu_max / 500.0;
    if (nu_min >= nu_max)
        throw Error(ErrorCode::OutOfDomain, "lattice_frequency_grid: nu_min must be below nu_max");
    std::vector<double> grid{0.0};
    const int geometric = points - 1;
    for (int i = 0; i < geometric; ++i) {
        const double t = geometric == 1 ? 1.0 : static_cast<double>(i) / (geometric - 1);
        grid.push_back(nu_min * std::pow(nu_max / nu_min, t));
    }
    grid.back() = nu_max;
    return grid;
}

namespace {

struct Snapshot {
    double nu = 0.0;
    CrystalState state;
    MatrixXd tracked;      // columns by branch id
    VectorXd frequencies;  // Hz by branch id
};

struct Assignment {
    std::vector<int> mode_of_branch;
    bool ok = true;
    std::vector<CrossingFlag> flags;
};

// Rotate eigenvectors inside exactly degenerate groups so they line up with
// the previously tracked vectors; the eigensolver's choice there is arbitrary.
void align_degenerate(MatrixXd& b, const VectorXd& lambda, const MatrixXd& previous)
{
    const auto dim = lambda.size();
    Eigen::Index i = 0;
    while (i < dim) {
        Eigen::Index j = i + 1;
        while (j < dim && lambda(j) - lambda(j - 1) <= 1e-9 * std::max(1.0, std::abs(lambda(j))))
            ++j;
        const Eigen::Index k = j - i;
        if (k > 1) {
            const MatrixXd block = b.middleCols(i, k);
            const MatrixXd proj = block.transpose() * previous;
            std::vector<Eigen::Index> cols(previous.cols());
            for (Eigen::Index c = 0; c < previous.cols(); ++c)
                cols[c] = c;
            std::stable_sort(cols.begin(), cols.end(), [&](Eigen::Index a, Eigen::Index c) {
                return proj.col(a).squaredNorm() > proj.col(c).squaredNorm();
            });
            std::sort(cols.begin(), cols.begin() + k);
            MatrixXd target(k, k);
            for (Eigen::Index c = 0; c < k; ++c)
                target.col(c) = proj.col(cols[c]);
            Eigen::JacobiSVD<MatrixXd> svd(target, Eigen::ComputeFullU | Eigen::ComputeFullV);
            b.middleCols(i, k) = block * (svd.matrixU() * svd.matrixV().transpose());
        }
        i = j;
    }
}

Assignment assign_branches(const MatrixXd& overlap, const ContinuationOptions& options)
{
    const auto dim = overlap.rows();
    struct Entry {
        double value;
        Eigen::Index branch;
        Eigen::Index mode;
    };
    std::vector<Entry> entries;
    entries.reserve(dim * dim);
    for (Eigen::Index r = 0; r < dim; ++r)
        for (Eigen::Index c = 0; c < dim; ++c)
            entries.push_back({overlap(r, c), r, c});
    std::stable_sort(entries.begin(), entries.end(),
                     [](const Entry& a, const Entry& b) { return a.value > b.value; });
    Assignment out;
    out.mode_of_branch.assign(dim, -1);
    std::vector<bool> used(dim, false);
    for (const Entry& e : entries) {
        if (out.mode_of_branch[e.branch] >= 0 || used[e.mode])
            continue;
        out.mode_of_branch[e.branch] = static_cast<int>(e.mode);
        used[e.mode] = true;
    }
    for (Eigen::Index r = 0; r < dim; ++r) {
        const int chosen = out.mode_of_branch[r];
        const double o = overlap(r, chosen);
        double second = -1.0;
        Eigen::Index alt = chosen;
        for (Eigen::Index c = 0; c < dim; ++c) {
            if (c != chosen && overlap(r, c) > second) {
                second = overlap(r, c);
                alt = c;
            }
        }
        const bool weak = o < options.overlap_threshold;
        const bool ambiguous = o - second < options.ambiguity_margin;
        if (weak || ambiguous) {
            out.ok = false;
            CrossingFlag f;
            f.branch = static_cast<int>(r);
            f.chosen = chosen;
            f.alternative = static_cast<int>(alt);
            f.overlap_chosen = o;
            f.overlap_alternative = second;
            out.flags.push_back(f);
        }
    }
    return out;
}

class Tracker {
public:
    Tracker(std::size_t n, const TrapConfig& trap, const IonSpecies& species,
            const LatticeConfig& lattice, const ContinuationOptions& options)
        : n_(n), trap_(trap), species_(species), lattice_(lattice), options_(options)
    {
    }

    LatticeConfig lattice_at(double nu) const
    {
        LatticeConfig c = lattice_;
        const double u0 = pendulum::depth_for_lattice_frequency(nu, species_, lattice_.wavevector);
        c.depth = lattice_.blue_detuned() ? u0 : -u0;
        return c;
    }

    Snapshot first(double nu)
    {
        Snapshot s;
        s.nu = nu;
        const LatticeConfig lat = lattice_at(nu);
        s.state = equilibrium(n_, trap_, species_, lat, options_.equilibrium);
        saddle_ |= s.state.saddle;
        const ModeDecomposition md = normal_modes(s.state, trap_, species_, lat);
        s.tracked = md.coordinates;
        s.frequencies = md.frequencies / (2.0 * constants::pi);
        return s;
    }

    // Advance from prev to nu, halving the interval while the overlap
    // assignment is weak or ambiguous.
    Snapshot advance(const Snapshot& prev, double nu, int level, std::vector<CrossingFlag>& flags)
    {
        const LatticeConfig lat = lattice_at(nu);
        EquilibriumOptions eo = options_.equilibrium;
        eo.initial_guess = prev.state.positions;
        eo.escape_saddles = true;
        Snapshot s;
        s.nu = nu;
        s.state = equilibrium(n_, trap_, species_, lat, eo);
        saddle_ |= s.state.saddle;
        escapes_ += s.state.saddle_escapes > 0 ? 1 : 0;
        const ModeDecomposition md = normal_modes(s.state, trap_, species_, lat);
        MatrixXd b = md.coordinates;
        align_degenerate(b, md.eigenvalues, prev.tracked);
        const MatrixXd overlap = (prev.tracked.transpose() * b).cwiseAbs();
        Assignment a = assign_branches(overlap, options_);
        if (!a.ok && level < options_.max_refinement) {
            ++extra_points_;
            const Snapshot mid = advance(prev, 0.5 * (prev.nu + nu), level + 1, flags);
            return advance(mid, nu, level + 1, flags);
        }
        for (CrossingFlag& f : a.flags) {
            f.nu_latt = nu;
            flags.push_back(f);
        }
        const auto dim = b.cols();
        s.tracked.resize(dim, dim);
        s.frequencies.resize(dim);
        for (Eigen::Index br = 0; br < dim; ++br) {
            const int mode = a.mode_of_branch[br];
            VectorXd v = b.col(mode);
            if (v.dot(prev.tracked.col(br)) < 0.0)
                v = -v;
            s.tracked.col(br) = v;
            s.frequencies(br) = md.frequencies(mode) / (2.0 * constants::pi);
        }
        return s;
    }

    int extra_points() const { return extra_points_; }
    bool saddle() const { return saddle_; }
    int escapes() const { return escapes_; }

private:
    std::size_t n_;
    TrapConfig trap_;
    IonSpecies species_;
    LatticeConfig lattice_;
    ContinuationOptions options_;
    int extra_points_ = 0;
    int escapes_ = 0;
    bool saddle_ = false;
};

}  // namespace

ContinuationResult continuation(std::size_t n_ions, const TrapConfig& trap,
                                const IonSpecies& species, const LatticeConfig& lattice,
                                const std::vector<double>& nu_grid,
                                const ContinuationOptions& options)
{
    if (nu_grid.empty())
        throw Error(ErrorCode::OutOfDomain, "continuation: empty grid");
    for (std::size_t i = 0; i < nu_grid.size(); ++i) {
        if (!(nu_grid[i] >= 0.0) || (i > 0 && !(nu_grid[i] > nu_grid[i - 1])))
            throw Error(ErrorCode::OutOfDomain, "continuation: grid must be ascending and >= 0");
    }
    lattice.validate();
    Tracker tracker(n_ions, trap, species, lattice, options);
    ContinuationResult result;
    Snapshot s = tracker.first(nu_grid.front());
    result.plane_normal = classify_structure(s.state.positions, trap).plane_normal;

    auto record = [&](const Snapshot& snap) {
        result.nu_latt.push_back(snap.nu);
        result.depth.push_back(snap.state.lattice_depth);
        result.equilibria.push_back(snap.state.positions);
        result.frequencies.push_back(snap.frequencies);
        result.coordinates.push_back(snap.tracked);
        const auto dim = snap.tracked.cols();
        VectorXd pw(dim), aw(dim);
        for (Eigen::Index b = 0; b < dim; ++b) {
            pw(b) = plane_weight(snap.tracked.col(b), result.plane_normal);
            aw(b) = axial_weight(snap.tracked.col(b));
        }
        result.plane_weights.push_back(pw);
        result.axial_weights.push_back(aw);
    };
    record(s);
    for (std::size_t i = 1; i < nu_grid.size(); ++i) {
        std::vector<CrossingFlag> flags;
        s = tracker.advance(s, nu_grid[i], 0, flags);
        for (CrossingFlag& f : flags) {
            f.step = i;
            result.crossings.push_back(f);
        }
        record(s);
    }
    result.extra_points = tracker.extra_points();
    result.saddle_encountered = tracker.saddle();
    result.saddle_escapes = tracker.escapes();
    return result;
}

ContinuationResult continuation(std::size_t n_ions, const TrapConfig& trap,
                                const IonSpecies& species, const LatticeConfig& lattice_max,
                                int steps, const ContinuationOptions& options)
{
    const double nu_max =
        pendulum::lattice_frequency(lattice_max.temperature(), species, lattice_max.wavevector);
    return continuation(n_ions, trap, species, lattice_max, lattice_frequency_grid(nu_max, steps),
                        options);
}

}  // namespace ionlattice::crystal
