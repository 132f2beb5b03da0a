#pragma once

#include <complex>

#include "safemargin/model.hpp"
#include "safemargin/types.hpp"

namespace safemargin {

struct NewtonDiverged : std::runtime_error {
    explicit NewtonDiverged(const std::string& what) : std::runtime_error(what) {}
};
struct NotStable : std::runtime_error {
    NotStable() : std::runtime_error("equilibrium is not asymptotically stable") {}
};
struct NotHyperbolic : std::runtime_error {
    NotHyperbolic() : std::runtime_error("equilibrium is not hyperbolic") {}
};
struct SingularJacobian : std::runtime_error {
    SingularJacobian() : std::runtime_error("singular Jacobian in equilibrium solve") {}
};

struct SepInfo {
    Vec x_star;
    Eigen::VectorXcd eigenvalues;  // of dV/dx at x_star
    Mat dXdp;                      // n x m, by the implicit function theorem
    double residual_norm = 0.0;    // ||V_p(x_star)||_inf
};

inline constexpr double kSepNewtonTol = 1e-10;
inline constexpr double kHyperbolicityMargin = 1e-8;

// Damped Newton solve of V_p(x) = 0 from `guess`, certified stable and
// hyperbolic. dXdp = -(dV/dx)^{-1} (dV/dp) at the solution.
SepInfo find_sep(const SystemModel& model, const Vec& p, const Vec& guess);

} // namespace safemargin
