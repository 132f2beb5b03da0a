#pragma once

#include <stdexcept>

namespace safemargin {

// Knobs shared by the boundary algorithms. Loaded from the config's
// `algorithm` section; fd steps are forwarded to the G gradient.
struct AlgoOptions {
    double epsilon = 1e-3;     // G-level target of the closest-point solve
    double kappa = 0.05;       // predictor step length
    double tol_g = 1e-6;
    double tol_p = 1e-6;
    int max_iter = 60;
    int max_backtrack = 40;
    double fd_step_rel = 1e-4;
    double fd_step_abs = 1e-5;
    int direction = +1;        // first trace direction tie-break
    bool corrector_eta_frozen = true;  // freeze eta at the anchor point

    void validate() const {
        if (!(epsilon > 0.0))
            throw std::invalid_argument("algorithm.epsilon must be > 0");
        if (!(kappa > 0.0))
            throw std::invalid_argument("algorithm.kappa must be > 0");
        if (!(tol_g > 0.0) || !(tol_p > 0.0))
            throw std::invalid_argument("algorithm tolerances must be > 0");
        if (max_iter < 1)
            throw std::invalid_argument("algorithm.max_iter must be >= 1");
        if (max_backtrack < 0 || max_backtrack > 60)
            throw std::invalid_argument("algorithm.max_backtrack must be in [0,60]");
        if (!(fd_step_rel > 0.0) || !(fd_step_abs > 0.0))
            throw std::invalid_argument("algorithm fd steps must be > 0");
        if (direction != 1 && direction != -1)
            throw std::invalid_argument("algorithm.direction must be +1 or -1");
    }
};

} // namespace safemargin
