#include "doctest.h"
#include "oracles.hpp"

#include "ionlattice/error.hpp"
#include "ionlattice/specfun.hpp"

#include <cmath>
#include <numbers>
#include <vector>

using namespace ionlattice;
using specfun::elliptic_e;
using specfun::elliptic_k;

namespace {

ErrorCode code_of(void (*f)())
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no exception");
    return ErrorCode::Io;
}

}  // namespace

TEST_CASE("elliptic integrals at m = 0 and E(1)")
{
    CHECK(elliptic_k(0.0) == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));
    CHECK(elliptic_e(0.0) == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));
    CHECK(elliptic_e(1.0) == 1.0);
}

TEST_CASE("elliptic integrals match a periodic trapezoid oracle to 1e-12")
{
    for (double m : {1e-6, 0.1, 0.25, 0.5, 0.7, 0.9, 0.99, 0.999}) {
        CAPTURE(m);
        CHECK(std::abs(elliptic_k(m) / oracle::elliptic_k(m) - 1.0) <= 1e-12);
        CHECK(std::abs(elliptic_e(m) / oracle::elliptic_e(m) - 1.0) <= 1e-12);
        const auto ke = specfun::elliptic_ke(m);
        CHECK(ke.k == elliptic_k(m));
        CHECK(ke.e == elliptic_e(m));
    }
    CHECK(elliptic_k(0.5) == doctest::Approx(1.8540746773013719).epsilon(1e-14));
    CHECK(elliptic_e(0.5) == doctest::Approx(1.3506438810476755).epsilon(1e-14));
}

TEST_CASE("Legendre relation")
{
    for (int i = 1; i <= 9; ++i) {
        const double m = 0.1 * i;
        const double k = elliptic_k(m), kp = elliptic_k(1.0 - m);
        const double e = elliptic_e(m), ep = elliptic_e(1.0 - m);
        CHECK(std::abs(e * kp + ep * k - k * kp - std::numbers::pi / 2) <= 1e-10);
    }
}

TEST_CASE("K has the logarithmic asymptote near m = 1")
{
    const double m = 1.0 - 1e-8;
    const double asymptote = 0.5 * std::log(16.0 / (1.0 - m));
    CHECK(std::abs(elliptic_k(m) / asymptote - 1.0) <= 1e-6);
}

TEST_CASE("K increases and E decreases on (0, 1)")
{
    double k_prev = elliptic_k(0.0), e_prev = elliptic_e(0.0);
    for (int i = 1; i < 1000; ++i) {
        const double m = i / 1000.0;
        const double k = elliptic_k(m), e = elliptic_e(m);
        CHECK(k > k_prev);
        CHECK(e < e_prev);
        k_prev = k;
        e_prev = e;
    }
}

TEST_CASE("elliptic domain errors are distinct")
{
    CHECK(code_of([] { elliptic_k(1.0); }) == ErrorCode::Divergence);
    CHECK(code_of([] { elliptic_k(-0.1); }) == ErrorCode::OutOfDomain);
    CHECK(code_of([] { elliptic_k(1.5); }) == ErrorCode::OutOfDomain);
    CHECK(code_of([] { elliptic_e(1.01); }) == ErrorCode::OutOfDomain);
    CHECK(code_of([] { elliptic_e(std::nan("")); }) == ErrorCode::OutOfDomain);
}

TEST_CASE("endpoint singularities")
{
    const std::vector<double> at0{0.0};
    auto log_inv = specfun::integrate_with_endpoint_singularity(
        [](double x) { return -std::log(x); }, 0.0, 1.0, at0, 1e-12);
    CHECK(log_inv.value == doctest::Approx(1.0).epsilon(1e-11));
    auto inv_sqrt = specfun::integrate_with_endpoint_singularity(
        [](double x) { return 1.0 / std::sqrt(x); }, 0.0, 1.0, at0, 1e-12);
    CHECK(inv_sqrt.value == doctest::Approx(2.0).epsilon(1e-11));

    // Interior singular point, each kind alone and both at once. The mixed
    // case is limited by the ulp spacing of x around 1.
    const std::vector<double> mid{1.0};
    auto inv_sqrt_mid = specfun::integrate_with_endpoint_singularity(
        [](double x) { return 1.0 / std::sqrt(std::abs(x - 1.0)); }, 0.0, 2.0, mid, 1e-12);
    CHECK(inv_sqrt_mid.value == doctest::Approx(4.0).epsilon(1e-12));
    auto log_mid = specfun::integrate_with_endpoint_singularity(
        [](double x) { return std::log(std::abs(x - 1.0)); }, 0.0, 2.0, mid, 1e-12);
    CHECK(log_mid.value == doctest::Approx(-2.0).epsilon(1e-12));
    auto both = specfun::integrate_with_endpoint_singularity(
        [](double x) { return 1.0 / std::sqrt(std::abs(x - 1.0)) + std::log(std::abs(x - 1.0)); },
        0.0, 2.0, mid, 1e-9);
    CHECK(std::abs(both.value - 2.0) <= 1e-9);
}

TEST_CASE("result is invariant under splitting the interval")
{
    auto f = [](double x) { return std::log(std::abs(x - 0.3)) * std::exp(-x); };
    const std::vector<double> s{0.3};
    const double whole = specfun::integrate_with_endpoint_singularity(f, 0.0, 2.0, s, 1e-12).value;
    for (double cut : {0.05, 0.29, 0.31, 0.9, 1.7}) {
        double parts = 0.0;
        if (cut < 0.3) {
            parts = specfun::integrate(f, 0.0, cut, 1e-13).value +
                    specfun::integrate_with_endpoint_singularity(f, cut, 2.0, s, 1e-13).value;
        } else {
            parts = specfun::integrate_with_endpoint_singularity(f, 0.0, cut, s, 1e-13).value +
                    specfun::integrate(f, cut, 2.0, 1e-13).value;
        }
        CAPTURE(cut);
        CHECK(std::abs(parts - whole) <= 2e-12);
    }
}

TEST_CASE("smooth integrand")
{
    auto r = specfun::integrate([](double x) { return std::cos(x); }, 0.0, std::numbers::pi / 2,
                                1e-14);
    CHECK(r.value == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(r.evaluations > 0);
    CHECK(r.abs_error <= 1e-14);
}

TEST_CASE("running out of panels reports the best estimate")
{
    try {
        specfun::integrate([](double x) { return std::sin(1.0 / x); }, 1e-4, 1.0, 1e-14, 3);
        FAIL("expected QuadratureError");
    } catch (const QuadratureError& e) {
        CHECK(std::isfinite(e.estimate()));
        CHECK(e.error_bound() > 1e-14);
        CHECK(e.code() == ErrorCode::NonConvergence);
    }
}
