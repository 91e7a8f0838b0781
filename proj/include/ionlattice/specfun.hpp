#pragma once

#include <functional>
#include <span>

namespace ionlattice::specfun {

// Complete elliptic integrals, written in terms of the PARAMETER m (not the
// modulus k = sqrt(m)):
//
//   K(m) = int_0^{pi/2} dt / sqrt(1 - m sin^2 t)
//   E(m) = int_0^{pi/2} sqrt(1 - m sin^2 t) dt
//
// Callers pass ratios such as E/U0 straight through as m. Mixing this up with
// the modulus convention silently corrupts every pendulum formula.
//
// Both are evaluated with the arithmetic-geometric mean.

// Valid on 0 <= m < 1. m == 1 raises ErrorCode::Divergence, anything outside
// [0, 1] raises ErrorCode::OutOfDomain.
double elliptic_k(double m);

// Valid on 0 <= m <= 1; E(1) = 1.
double elliptic_e(double m);

// K and E share the AGM sequence; use this when both are needed.
struct EllipticPair {
    double k;
    double e;
};
EllipticPair elliptic_ke(double m);

struct QuadratureResult {
    double value = 0.0;
    double abs_error = 0.0;
    int evaluations = 0;
};

using Integrand = std::function<double(double)>;

// Globally adaptive Gauss-Kronrod (7/15) quadrature over the finite interval
// [a, b].
//
// The interval is cut at every listed singular point (and at a or b when they
// are listed). Each resulting piece that touches a singular endpoint is
// integrated in the variable t with x = endpoint +/- h t^2, which cancels an
// inverse-square-root blow-up exactly and turns a logarithmic one into a
// bounded t ln t. The integrand is never evaluated at a listed point.
//
// f only sees x, so distances to an interior singular point below one ulp of
// that point cannot be resolved. An inverse square root there limits the
// attainable tolerance to roughly 1e-9 relative; use an endpoint at 0 when
// more is needed.
//
// Throws QuadratureError (with the best estimate and its error bound) when
// the requested absolute tolerance is not met within max_intervals panels.
QuadratureResult integrate_with_endpoint_singularity(const Integrand& f, double a, double b,
                                                     std::span<const double> singular_points,
                                                     double tol, int max_intervals = 4000);

// Plain adaptive Gauss-Kronrod on a smooth integrand.
QuadratureResult integrate(const Integrand& f, double a, double b, double tol,
                           int max_intervals = 4000);

}  // namespace ionlattice::specfun
