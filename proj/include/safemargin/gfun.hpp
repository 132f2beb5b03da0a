#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "safemargin/equilibrium.hpp"
#include "safemargin/model.hpp"

namespace safemargin {

struct RecoveryStatus {
    enum class Kind { Recovered, Diverged, Timeout, NoSep };
    Kind kind = Kind::Timeout;
    double t_conv = 0.0;  // Recovered: first time within conv_tol of the SEP
    double t_div = 0.0;   // Diverged: time the divergence bound was crossed
    std::string note;     // diagnostic, e.g. why no SEP was found

    bool recovered() const { return kind == Kind::Recovered; }
};

const char* to_string(RecoveryStatus::Kind kind);

// G(p) together with the sensitivity-norm profile it was computed from.
//
// sup_norm is the maximum of the profile, floored by ||dX^s/dp||_1 (the
// infinite-time limit of the sensitivity). t_hat is the profile sample time
// attaining the maximum; when the limit floor dominates, t_hat is the last
// sample time. g is stored as 1/sup_norm and is absent unless Recovered.
struct GEvaluation {
    std::optional<double> g;
    double t_hat = 0.0;
    double sup_norm = 0.0;
    std::vector<std::pair<double, double>> profile;  // (t, ||S(t)||_1)
    RecoveryStatus status;
};

struct StencilLeftRegion : std::runtime_error {
    StencilLeftRegion(int axis_, int side_)
        : std::runtime_error("finite-difference stencil left the recovery region "
                             "(axis " + std::to_string(axis_) + ", side " +
                             std::to_string(side_) + ")"),
          axis(axis_), side(side_) {}
    int axis;
    int side;  // +1 or -1
};

// Simulates the post-disturbance flow and reports recovery membership.
RecoveryStatus classify(const SystemModel& model, const Vec& p);

// Integrates the flow together with the variational equations from
// y(p), S(0) = Dy(p), until the state has recovered and ||S||_1 has been
// non-increasing for 50 consecutive accepted steps.
GEvaluation eval_G(const SystemModel& model, const Vec& p);

// Central finite differences of eval_G, component step
// h_k = max(fd_step_abs, fd_step_rel*|p_k|). Throws StencilLeftRegion when a
// stencil point does not classify Recovered.
Vec grad_G(const SystemModel& model, const Vec& p, double fd_step_rel,
           double fd_step_abs);
Vec grad_G(const SystemModel& model, const Vec& p);  // steps from model.algo

} // namespace safemargin
