#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ionlattice {

enum class ErrorCode {
    OutOfDomain,            // argument outside the function's domain
    Divergence,             // argument sits on a pole / log singularity
    NonConvergence,         // iterative solver or quadrature gave up
    SingularConfiguration,  // coincident ions
    UnstableConfiguration,  // negative Hessian eigenvalue
    DegenerateFit,
    NonPhysical,
    Config,
    Parse,
    Io,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Quadrature that ran out of refinement budget. The best estimate and its
// error bound are kept so callers can decide whether it is good enough.
class QuadratureError : public Error {
public:
    QuadratureError(double estimate, double error_bound, const std::string& what)
        : Error(ErrorCode::NonConvergence, what),
          estimate_(estimate), error_bound_(error_bound) {}

    double estimate() const noexcept { return estimate_; }
    double error_bound() const noexcept { return error_bound_; }

private:
    double estimate_;
    double error_bound_;
};

// Minimizer failure; carries the last iterate (flattened coordinates).
class ConvergenceError : public Error {
public:
    ConvergenceError(std::vector<double> last_iterate, double gradient_norm,
                     const std::string& what)
        : Error(ErrorCode::NonConvergence, what),
          last_iterate_(std::move(last_iterate)), gradient_norm_(gradient_norm) {}

    const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }
    double gradient_norm() const noexcept { return gradient_norm_; }

private:
    std::vector<double> last_iterate_;
    double gradient_norm_;
};

}  // namespace ionlattice
