#include "ionlattice/specfun.hpp"

#include "ionlattice/constants.hpp"
#include "ionlattice/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <queue>
#include <sstream>
#include <vector>

namespace ionlattice {

std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::OutOfDomain: return "out of domain";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::NonConvergence: return "non-convergence";
    case ErrorCode::SingularConfiguration: return "singular configuration";
    case ErrorCode::UnstableConfiguration: return "unstable configuration";
    case ErrorCode::DegenerateFit: return "degenerate fit";
    case ErrorCode::NonPhysical: return "non-physical";
    case ErrorCode::Config: return "config";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Io: return "io";
    }
    return "unknown";
}

namespace specfun {

namespace {

void check_parameter(double m, bool allow_one, const char* name)
{
    if (std::isnan(m) || m < 0.0 || m > 1.0) {
        std::ostringstream os;
        os << name << ": parameter m=" << m << " outside [0, 1]";
        throw Error(ErrorCode::OutOfDomain, os.str());
    }
    if (m == 1.0 && !allow_one)
        throw Error(ErrorCode::Divergence, std::string(name) + ": K(m) diverges at m=1");
}

}  // namespace

EllipticPair elliptic_ke(double m)
{
    check_parameter(m, false, "elliptic_ke");
    // a_0 = 1, b_0 = sqrt(1-m), c_0^2 = m.
    // K = pi / (2 a_inf),  E = K (1 - sum_n 2^(n-1) c_n^2).
    // c_{n+1} = c_n^2 / (4 a_{n+1}) avoids the a-b cancellation.
    double a = 1.0;
    double b = std::sqrt(1.0 - m);
    double c = std::sqrt(m);
    double sum = 0.5 * m;
    double weight = 0.5;
    for (int n = 0; n < 64; ++n) {
        if (std::abs(c) <= 1e-17 * a)
            break;
        const double a_next = 0.5 * (a + b);
        const double b_next = std::sqrt(a * b);
        c = c * c / (4.0 * a_next);
        a = a_next;
        b = b_next;
        weight *= 2.0;
        sum += weight * c * c;
    }
    const double k = constants::pi / (2.0 * a);
    return {k, k * (1.0 - sum)};
}

double elliptic_k(double m)
{
    check_parameter(m, false, "elliptic_k");
    return elliptic_ke(m).k;
}

double elliptic_e(double m)
{
    check_parameter(m, true, "elliptic_e");
    if (m == 1.0)
        return 1.0;
    return elliptic_ke(m).e;
}

namespace {

// Gauss-Kronrod 7/15 abscissae and weights (QUADPACK qk15).
constexpr std::array<double, 8> xgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr std::array<double, 8> wgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr std::array<double, 4> wg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Panel {
    double a;
    double b;
    double value;
    double error;
    bool operator<(const Panel& other) const { return error < other.error; }
};

Panel gauss_kronrod(const Integrand& f, double a, double b, int& evaluations)
{
    const double center = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    const double fc = f(center);
    double kronrod = fc * wgk[7];
    double gauss = fc * wg[3];
    for (int j = 0; j < 7; ++j) {
        const double dx = half * xgk[j];
        const double f1 = f(center - dx);
        const double f2 = f(center + dx);
        kronrod += wgk[j] * (f1 + f2);
        if (j % 2 == 1)
            gauss += wg[j / 2] * (f1 + f2);
    }
    evaluations += 15;
    return {a, b, kronrod * half, std::abs((kronrod - gauss) * half)};
}

QuadratureResult adaptive(const Integrand& f, double a, double b, double tol, int max_intervals)
{
    QuadratureResult result;
    if (a == b)
        return result;
    std::priority_queue<Panel> panels;
    const Panel first = gauss_kronrod(f, a, b, result.evaluations);
    double total = first.value;
    double error = first.error;
    panels.push(first);
    int count = 1;
    while (error > tol) {
        if (count >= max_intervals)
            break;
        const Panel worst = panels.top();
        const double mid = 0.5 * (worst.a + worst.b);
        if (mid <= worst.a || mid >= worst.b)
            break;  // cannot bisect further in double precision
        panels.pop();
        const Panel left = gauss_kronrod(f, worst.a, mid, result.evaluations);
        const Panel right = gauss_kronrod(f, mid, worst.b, result.evaluations);
        total += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        panels.push(left);
        panels.push(right);
        ++count;
    }
    // Re-sum to shed the drift of the running totals.
    total = 0.0;
    error = 0.0;
    while (!panels.empty()) {
        total += panels.top().value;
        error += panels.top().error;
        panels.pop();
    }
    result.value = total;
    result.abs_error = error;
    return result;
}

}  // namespace

QuadratureResult integrate(const Integrand& f, double a, double b, double tol, int max_intervals)
{
    const double no_points[1] = {0.0};
    return integrate_with_endpoint_singularity(f, a, b, std::span<const double>(no_points, 0), tol,
                                               max_intervals);
}

QuadratureResult integrate_with_endpoint_singularity(const Integrand& f, double a, double b,
                                                     std::span<const double> singular_points,
                                                     double tol, int max_intervals)
{
    if (!(std::isfinite(a) && std::isfinite(b)))
        throw Error(ErrorCode::OutOfDomain, "integrate: limits must be finite");
    if (!(tol > 0.0))
        throw Error(ErrorCode::OutOfDomain, "integrate: tolerance must be positive");
    double sign = 1.0;
    if (b < a) {
        std::swap(a, b);
        sign = -1.0;
    }

    std::vector<double> cuts{a, b};
    std::vector<double> singular;
    for (double s : singular_points) {
        if (s < a || s > b) {
            std::ostringstream os;
            os << "integrate: singular point " << s << " outside [" << a << ", " << b << "]";
            throw Error(ErrorCode::OutOfDomain, os.str());
        }
        singular.push_back(s);
        cuts.push_back(s);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    auto is_singular = [&](double x) {
        return std::find(singular.begin(), singular.end(), x) != singular.end();
    };

    // Pieces with at most one singular end; left_singular tells which end.
    struct Piece {
        double lo;
        double hi;
        bool left_singular;
        bool right_singular;
    };
    std::vector<Piece> pieces;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double lo = cuts[i];
        const double hi = cuts[i + 1];
        const bool ls = is_singular(lo);
        const bool rs = is_singular(hi);
        if (ls && rs) {
            const double mid = 0.5 * (lo + hi);
            pieces.push_back({lo, mid, true, false});
            pieces.push_back({mid, hi, false, true});
        } else {
            pieces.push_back({lo, hi, ls, rs});
        }
    }

    QuadratureResult total;
    const double piece_tol = tol / static_cast<double>(pieces.size());
    bool failed = false;
    for (const Piece& p : pieces) {
        const double h = p.hi - p.lo;
        Integrand g;
        // Near t = 0 the mapped x can round onto the singular end; step one
        // ulp inside so f is never evaluated there.
        if (p.left_singular) {
            g = [&f, lo = p.lo, hi = p.hi, h](double t) {
                double x = lo + h * t * t;
                if (x <= lo)
                    x = std::nextafter(lo, hi);
                return f(x) * 2.0 * h * t;
            };
        } else if (p.right_singular) {
            g = [&f, lo = p.lo, hi = p.hi, h](double t) {
                double x = hi - h * t * t;
                if (x >= hi)
                    x = std::nextafter(hi, lo);
                return f(x) * 2.0 * h * t;
            };
        }
        QuadratureResult r = (p.left_singular || p.right_singular)
                                 ? adaptive(g, 0.0, 1.0, piece_tol, max_intervals)
                                 : adaptive(f, p.lo, p.hi, piece_tol, max_intervals);
        total.value += r.value;
        total.abs_error += r.abs_error;
        total.evaluations += r.evaluations;
        if (r.abs_error > piece_tol)
            failed = true;
    }
    total.value *= sign;
    if (failed && total.abs_error > tol) {
        std::ostringstream os;
        os << "integrate: tolerance " << tol << " not reached on [" << a << ", " << b
           << "], estimate " << total.value << " +/- " << total.abs_error;
        throw QuadratureError(total.value, total.abs_error, os.str());
    }
    return total;
}

}  // namespace specfun
}  // namespace ionlattice
